// End-to-end checks of the command-line binary: each pipeline stage is run
// as a subprocess and its artifacts are re-read and cross-checked against
// the library called in-process.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "brmil/bagio.hpp"
#include "brmil/checkpoint.hpp"
#include "brmil/seqscan.hpp"

#ifndef BRMIL_CLI_PATH
#error "BRMIL_CLI_PATH must point at the built command-line binary"
#endif

namespace {

namespace fs = std::filesystem;
using namespace brmil;

const fs::path& work_dir() {
  static const fs::path dir = [] {
    std::string tmpl = (fs::temp_directory_path() / "brmil_cli_XXXXXX").string();
    const char* made = mkdtemp(tmpl.data());
    REQUIRE(made != nullptr);
    return fs::path(made);
  }();
  return dir;
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

RunResult run(const std::string& args) {
  static int n = 0;
  const fs::path so = work_dir() / ("stdout." + std::to_string(n));
  const fs::path se = work_dir() / ("stderr." + std::to_string(n));
  ++n;
  const std::string cmd = std::string(BRMIL_CLI_PATH) + " " + args + " > " +
                          so.string() + " 2> " + se.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

const char* kTinyConfig = R"(encoder.teacher_c1 = 3
encoder.teacher_c2 = 3
encoder.teacher_hidden = 16
encoder.d_teacher = 12
encoder.student_channels = 2
encoder.d_student = 8
selector.kmax = 8
selector.bins = 4
selector.heap_size = 4
selector.quota_top = 2
aggregator.kmax = 8
aggregator.d_token = 15
aggregator.width = 8
aggregator.heads = 2
aggregator.depth = 1
synth.n_pairs = 16
synth.mu_n = 1.5
synth.sigma_n = 0.5
synth.n_max = 12
stage1.epochs = 1
stage2.epochs = 1
stage3.epochs = 2
stage1.warmup_epochs = 0
stage2.warmup_epochs = 0
stage3.warmup_epochs = 1
stage1.batch_size = 8
stage2.batch_size = 8
stage3.batch_size = 8
seed = 2020
)";

fs::path tiny_config() {
  const fs::path p = work_dir() / "tiny.cfg";
  if (!fs::exists(p)) spit(p, kTinyConfig);
  return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Deterministic FASTA pair: each target carries two planted reverse
// complements of the guide's first ten symbols inside fixed filler.
void write_fasta_fixtures(const fs::path& mir, const fs::path& utr) {
  const std::vector<std::string> guides = {"UGAGGUAGUAGGUUGUAUAGUU",
                                           "UAAAGUGCUUAUAGUGCAGGUAG"};
  auto rc10 = [](const std::string& g) {
    std::string site;
    for (int i = 9; i >= 0; --i) {
      switch (g[static_cast<std::size_t>(i)]) {
        case 'A': site += 'U'; break;
        case 'U': site += 'A'; break;
        case 'G': site += 'C'; break;
        default: site += 'G'; break;
      }
    }
    return site;
  };
  std::string mtext, utext;
  const std::string filler(50, 'A');
  for (std::size_t i = 0; i < guides.size(); ++i) {
    mtext += ">m" + std::to_string(i) + "\n" + guides[i] + "\n";
    const std::string site = rc10(guides[i]);
    utext += ">u" + std::to_string(i) + "\n" + filler + site + filler + site + filler +
             "\n";
  }
  spit(mir, mtext);
  spit(utr, utext);
}

}  // namespace

TEST_CASE("help exits 0; missing subcommand and unknown flags exit 1") {
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 1);
  CHECK(run("explode").code == 1);
  CHECK(run("infer --out x.csv").code == 1);  // required --checkpoint missing
}

TEST_CASE("scan matches the library and survives a bag-file round trip") {
  const fs::path mir = work_dir() / "mir.fa";
  const fs::path utr = work_dir() / "utr.fa";
  const fs::path bags_path = work_dir() / "scanned.jsonl";
  write_fasta_fixtures(mir, utr);

  const RunResult r = run("scan --mirna " + q(mir) + " --utr " + q(utr) + " --out " +
                          q(bags_path));
  CHECK(r.code == 0);
  CHECK(r.out.find("pairs: 2") != std::string::npos);
  CHECK(r.out.find("candidates:") != std::string::npos);

  const std::vector<Bag> bags = read_bags_file(bags_path.string());
  REQUIRE(bags.size() == 2);
  CHECK(bags[0].pair_id == "m0|u0");
  CHECK(bags[1].pair_id == "m1|u1");

  // Re-run the scan in-process and demand identical pools.
  std::ifstream mf(mir), uf(utr);
  std::string line, mseq, useq;
  std::getline(mf, line);
  std::getline(mf, mseq);
  std::getline(uf, line);
  std::getline(uf, useq);
  const Bag direct = scan(parse_seq(mseq, NucSeq::Role::mirna),
                          parse_seq(useq, NucSeq::Role::utr), "m0|u0");
  REQUIRE(bags[0].n() == direct.n());
  REQUIRE(direct.n() > 0);
  for (int i = 0; i < direct.n(); ++i) {
    const auto& a = bags[0].candidates[static_cast<std::size_t>(i)];
    const auto& b = direct.candidates[static_cast<std::size_t>(i)];
    CHECK(a.window_start == b.window_start);
    CHECK(a.s_esa == doctest::Approx(b.s_esa).epsilon(1e-12));
    REQUIRE(a.x.shape() == b.x.shape());
    for (int j = 0; j < a.x.numel(); ++j)
      CHECK(a.x.data()[j] == doctest::Approx(b.x.data()[j]).epsilon(1e-12));
  }
}

TEST_CASE("scan: empty input is a warning, malformed input names the record") {
  const fs::path empty = work_dir() / "empty.fa";
  spit(empty, "");
  const fs::path out = work_dir() / "empty.jsonl";
  const RunResult ok = run("scan --mirna " + q(empty) + " --utr " + q(empty) +
                           " --out " + q(out));
  CHECK(ok.code == 0);
  CHECK(ok.err.find("warning") != std::string::npos);
  CHECK(read_bags_file(out.string()).empty());

  const fs::path badm = work_dir() / "bad.fa";
  const fs::path goodu = work_dir() / "goodu.fa";
  spit(badm, ">oops\nACXGU\n");
  spit(goodu, ">u\n" + std::string(60, 'A') + "\n");
  const RunResult bad = run("scan --mirna " + q(badm) + " --utr " + q(goodu) +
                            " --out " + q(out));
  CHECK(bad.code == 2);
  CHECK(bad.err.find("oops") != std::string::npos);

  const RunResult mismatch = run("scan --mirna " + q(badm) + " --utr " + q(empty) +
                                 " --out " + q(out));
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("mismatch") != std::string::npos);
}

TEST_CASE("train produces a log and a loadable checkpoint; infer scores bags") {
  const fs::path dir = work_dir() / "trainrun";
  fs::create_directories(dir);
  const fs::path bags = dir / "bags.jsonl";
  const RunResult tr = run("train --config " + q(tiny_config()) + " --emit-synth " +
                           q(bags) + " --out-dir " + q(dir));
  REQUIRE(tr.code == 0);
  CHECK(tr.out.find("stage 1") != std::string::npos);
  CHECK(tr.out.find("stage 3") != std::string::npos);
  CHECK(tr.out.find("budget_violations 0") != std::string::npos);

  const std::string log = slurp(dir / "train_log.csv");
  CHECK(log.rfind("# brmil.trainlog.v1\n", 0) == 0);
  CHECK(log.find("stage,epoch,split,loss") != std::string::npos);

  const Checkpoint ckp = load_checkpoint((dir / "model.ckpt").string());
  CHECK(ckp.meta.find("brmil.ckpt.v1") != std::string::npos);
  CHECK_FALSE(ckp.tensors.empty());

  const fs::path preds = dir / "preds.csv";
  const RunResult inf = run("infer --config " + q(tiny_config()) + " --bags " + q(bags) +
                            " --checkpoint " + q(dir / "model.ckpt") + " --out " +
                            q(preds));
  REQUIRE(inf.code == 0);
  std::istringstream in(slurp(preds));
  std::string line;
  std::getline(in, line);
  CHECK(line == "# brmil.preds.v1");
  std::getline(in, line);
  CHECK(line == "pair_id,n,k,s_size,z_pair,y_hat,empty");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    const std::size_t last_comma = line.rfind(',');
    const std::size_t prev_comma = line.rfind(',', last_comma - 1);
    const double y = std::stod(line.substr(prev_comma + 1, last_comma - prev_comma - 1));
    CHECK(y >= 0.0);
    CHECK(y <= 1.0);
  }
  CHECK(rows == static_cast<int>(read_bags_file(bags.string()).size()));
}

TEST_CASE("identical invocations produce byte-identical artifacts") {
  const fs::path dir = work_dir() / "det";
  fs::create_directories(dir);
  const fs::path bags = dir / "bags.jsonl";
  REQUIRE(run("train --config " + q(tiny_config()) + " --emit-synth " + q(bags) +
              " --out-dir " + q(dir))
              .code == 0);
  const std::string ckpt1 = slurp(dir / "model.ckpt");
  const std::string log1 = slurp(dir / "train_log.csv");
  REQUIRE(run("train --config " + q(tiny_config()) + " --emit-synth " + q(bags) +
              " --out-dir " + q(dir))
              .code == 0);
  CHECK(slurp(dir / "model.ckpt") == ckpt1);
  CHECK(slurp(dir / "train_log.csv") == log1);

  const std::string infer_cmd = "infer --config " + q(tiny_config()) + " --bags " +
                                q(bags) + " --checkpoint " + q(dir / "model.ckpt") +
                                " --out " + q(dir / "p.csv");
  REQUIRE(run(infer_cmd).code == 0);
  const std::string p1 = slurp(dir / "p.csv");
  REQUIRE(run(infer_cmd).code == 0);
  CHECK(slurp(dir / "p.csv") == p1);
  CHECK_FALSE(p1.empty());

  const std::string sel_cmd = "select --config " + q(tiny_config()) + " --bags " +
                              q(bags) + " --checkpoint " + q(dir / "model.ckpt") +
                              " --out " + q(dir / "s.csv");
  REQUIRE(run(sel_cmd).code == 0);
  const std::string s1 = slurp(dir / "s.csv");
  REQUIRE(run(sel_cmd).code == 0);
  CHECK(slurp(dir / "s.csv") == s1);
  CHECK(s1.rfind("# brmil.select.v1\n", 0) == 0);
}

TEST_CASE("sweeps, ablation and audit commands emit schema-tagged CSVs") {
  const fs::path dir = work_dir() / "det";  // reuse the trained artifacts
  const fs::path bags = dir / "bags.jsonl";
  const fs::path ckpt = dir / "model.ckpt";
  REQUIRE(fs::exists(ckpt));

  const fs::path sk = dir / "sweepk.csv";
  REQUIRE(run("sweep-k --config " + q(tiny_config()) + " --bags " + q(bags) +
              " --checkpoint " + q(ckpt) + " --ks 2,4,8 --out " + q(sk))
              .code == 0);
  const std::string sweep = slurp(sk);
  CHECK(sweep.rfind("# brmil.sweep.v1\nk,pr_auc_mean", 0) == 0);
  // Full-budget truncation is the identity, so the last gap column is zero.
  CHECK(sweep.find("\n8,") != std::string::npos);

  const fs::path sn = dir / "sweepn.csv";
  REQUIRE(run("sweep-n --config " + q(tiny_config()) + " --bags " + q(bags) +
              " --checkpoint " + q(ckpt) + " --caps 2,6 --out " + q(sn))
              .code == 0);
  CHECK(slurp(sn).rfind("# brmil.sweep.v1\nn_cap,", 0) == 0);

  const fs::path ab = dir / "ablate.csv";
  REQUIRE(run("ablate --config " + q(tiny_config()) + " --checkpoint " + q(ckpt) +
              " --ks 4,8 --seeds 2020,2025 --out " + q(ab))
              .code == 0);
  const std::string ablate = slurp(ab);
  CHECK(ablate.rfind("# brmil.ablate.v1\nvariant,k,seeds,", 0) == 0);
  CHECK(ablate.find("\nS0,4,2,") != std::string::npos);
  CHECK(ablate.find("\nS2,8,2,") != std::string::npos);

  const fs::path th = dir / "theory.csv";
  REQUIRE(run("theory --config " + q(tiny_config()) + " --bags " + q(bags) +
              " --checkpoint " + q(ckpt) + " --ks 2,4 --max-bags 4 --out " + q(th))
              .code == 0);
  std::istringstream in(slurp(th));
  std::string line;
  std::getline(in, line);
  CHECK(line == "# brmil.theory.v1");
  std::getline(in, line);
  CHECK(line == "pair_id,count,k,big_g,radius,eps_k,delta_k,gap,bound,ok,advisory");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows >= 1);
}

TEST_CASE("exit codes: configuration 1, data 2") {
  CHECK(run("train --config " + q(work_dir() / "missing.cfg")).code == 1);
  CHECK(run("train --config " + q(tiny_config()) + " --set selector.kmax=0 --out-dir " +
            q(work_dir()))
            .code == 1);
  CHECK(run("train --config " + q(tiny_config()) + " --set no.such.key=1 --out-dir " +
            q(work_dir()))
            .code == 1);
  CHECK(run("infer --config " + q(tiny_config()) + " --bags " +
            q(work_dir() / "missing.jsonl") + " --checkpoint " +
            q(work_dir() / "missing.ckpt") + " --out " + q(work_dir() / "x.csv"))
            .code == 2);
  CHECK(run("bench --config " + q(tiny_config())).code == 1);  // no outputs requested
}
