#include "brmil/seqscan.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace brmil {

namespace {

constexpr double kMatch = 1.0;
constexpr double kWobble = 0.5;
constexpr double kMismatch = 0.0;
constexpr double kGap = -2.0;

// Pair score in reverse-complement space: identical symbols mean a
// Watson-Crick pair in the duplex; (seed G, rc A) and (seed U, rc C) are the
// two G:U wobble readings.
double pair_score(char seed, char rc) {
  if (seed == rc) return kMatch;
  if ((seed == 'G' && rc == 'A') || (seed == 'U' && rc == 'C')) return kWobble;
  return kMismatch;
}

}  // namespace

int sym_index(char c) {
  switch (c) {
    case 'A': return 0;
    case 'C': return 1;
    case 'G': return 2;
    case 'U': return 3;
    default: throw ParseError(std::string("invalid nucleotide '") + c + "'");
  }
}

char complement(char c) {
  switch (c) {
    case 'A': return 'U';
    case 'U': return 'A';
    case 'C': return 'G';
    case 'G': return 'C';
    default: throw ParseError(std::string("invalid nucleotide '") + c + "'");
  }
}

NucSeq parse_seq(std::string_view raw, NucSeq::Role role) {
  NucSeq seq;
  seq.role = role;
  seq.symbols.reserve(raw.size());
  for (char c : raw) {
    char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u == 'T') u = 'U';
    if (u == 'A' || u == 'C' || u == 'G' || u == 'U') {
      seq.symbols.push_back(u);
    } else {
      throw ParseError(std::string("invalid nucleotide '") + c + "' in sequence");
    }
  }
  if (seq.symbols.empty()) throw ParseError("empty sequence");
  return seq;
}

EsaAlignment esa_align(const NucSeq& mirna, std::string_view window) {
  if (mirna.size() < kSeedLen)
    throw ShapeError("miRNA shorter than the 10-nt extended seed");
  if (static_cast<int>(window.size()) != kWindowLen)
    throw ShapeError("window length must be 40, got " + std::to_string(window.size()));

  // Reverse-complement reading of the window.
  std::array<char, kWindowLen> rc{};
  for (int k = 0; k < kWindowLen; ++k)
    rc[static_cast<std::size_t>(k)] = complement(window[static_cast<std::size_t>(kWindowLen - 1 - k)]);

  const char* seed = mirna.symbols.data();  // positions 1..10 from the 5' end

  // H is (kSeedLen+1) x (kWindowLen+1), row-major.
  constexpr int cols = kWindowLen + 1;
  std::array<double, (kSeedLen + 1) * cols> H{};
  double best = 0.0;
  int bi = 0, bj = 0;
  for (int i = 1; i <= kSeedLen; ++i) {
    for (int j = 1; j <= kWindowLen; ++j) {
      const double diag = H[static_cast<std::size_t>((i - 1) * cols + (j - 1))] +
                          pair_score(seed[i - 1], rc[static_cast<std::size_t>(j - 1)]);
      const double up = H[static_cast<std::size_t>((i - 1) * cols + j)] + kGap;
      const double left = H[static_cast<std::size_t>(i * cols + (j - 1))] + kGap;
      const double v = std::max({0.0, diag, up, left});
      H[static_cast<std::size_t>(i * cols + j)] = v;
      if (v > best) {  // strict: ties keep the lowest (i, j) end cell
        best = v;
        bi = i;
        bj = j;
      }
    }
  }

  EsaAlignment out;
  out.score = best;
  if (best <= 0.0) return out;

  // Traceback, diagonal preferred over up over left.
  std::string ops;
  int i = bi, j = bj;
  while (i > 0 && j > 0 && H[static_cast<std::size_t>(i * cols + j)] > 0.0) {
    const double v = H[static_cast<std::size_t>(i * cols + j)];
    const double diag = H[static_cast<std::size_t>((i - 1) * cols + (j - 1))] +
                        pair_score(seed[i - 1], rc[static_cast<std::size_t>(j - 1)]);
    if (v == diag) {
      ops.push_back('M');
      --i;
      --j;
    } else if (v == H[static_cast<std::size_t>((i - 1) * cols + j)] + kGap) {
      ops.push_back('D');
      --i;
    } else {
      ops.push_back('I');
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  out.ops = std::move(ops);
  out.seed_begin = i;      // first aligned seed index (0-based)
  out.seed_end = bi - 1;
  out.rc_begin = j;
  out.rc_end = bj - 1;
  return out;
}

double esa_score(const NucSeq& mirna, const NucSeq& window) {
  return esa_align(mirna, window.symbols).score;
}

std::pair<std::string, std::string> gapped_rows(const NucSeq& mirna,
                                                std::string_view window,
                                                const EsaAlignment& a) {
  if (static_cast<int>(window.size()) != kWindowLen)
    throw ShapeError("window length must be 40, got " + std::to_string(window.size()));

  // Window in reverse-complement ORDER but original LETTERS: reading the
  // mRNA 3'->5' under the miRNA 5'->3'.
  std::string wdisp(window);
  std::reverse(wdisp.begin(), wdisp.end());
  const std::string& m = mirna.symbols;

  std::string mrow, wrow;
  auto emit = [&](char mc, char wc) {
    mrow.push_back(mc);
    wrow.push_back(wc);
  };

  if (a.score <= 0.0 || a.ops.empty()) {
    // No anchor: just lay both full rows out from column 0.
    const int width = std::max(mirna.size(), kWindowLen);
    for (int t = 0; t < width; ++t)
      emit(t < mirna.size() ? m[static_cast<std::size_t>(t)] : '-',
           t < kWindowLen ? wdisp[static_cast<std::size_t>(t)] : '-');
    return {mrow, wrow};
  }

  const int pre_m = a.seed_begin;
  const int pre_w = a.rc_begin;
  const int lead = std::max(pre_m, pre_w);
  for (int t = 0; t < lead; ++t) {
    const int mi = t - (lead - pre_m);
    const int wi = t - (lead - pre_w);
    emit(mi >= 0 ? m[static_cast<std::size_t>(mi)] : '-',
         wi >= 0 ? wdisp[static_cast<std::size_t>(wi)] : '-');
  }

  int mi = a.seed_begin, wi = a.rc_begin;
  for (char op : a.ops) {
    switch (op) {
      case 'M':
        emit(m[static_cast<std::size_t>(mi++)], wdisp[static_cast<std::size_t>(wi++)]);
        break;
      case 'D':
        emit(m[static_cast<std::size_t>(mi++)], '-');
        break;
      case 'I':
        emit('-', wdisp[static_cast<std::size_t>(wi++)]);
        break;
      default:
        throw ShapeError("bad alignment op");
    }
  }

  const int post = std::max(mirna.size() - mi, kWindowLen - wi);
  for (int t = 0; t < post; ++t) {
    emit(mi + t < mirna.size() ? m[static_cast<std::size_t>(mi + t)] : '-',
         wi + t < kWindowLen ? wdisp[static_cast<std::size_t>(wi + t)] : '-');
  }
  return {mrow, wrow};
}

Tensor encode_rows(const std::string& mrow, const std::string& wrow) {
  if (mrow.size() != wrow.size())
    throw ShapeError("gapped rows differ in length");
  const int width = static_cast<int>(mrow.size());
  if (width > kEncodeCols)
    throw ShapeError("duplex picture is " + std::to_string(width) +
                     " columns wide, limit " + std::to_string(kEncodeCols));
  Tensor x = Tensor::zeros({kEncodeRows, kEncodeCols});
  auto channel = [](char c) { return c == '-' ? 4 : sym_index(c); };
  for (int t = 0; t < width; ++t) {
    x.data()[channel(mrow[static_cast<std::size_t>(t)]) * kEncodeCols + t] = 1.0;
    x.data()[(5 + channel(wrow[static_cast<std::size_t>(t)])) * kEncodeCols + t] = 1.0;
  }
  return x;
}

Tensor encode_cts(const NucSeq& mirna, std::string_view window, const EsaAlignment& a) {
  auto [mrow, wrow] = gapped_rows(mirna, window, a);
  return encode_rows(mrow, wrow);
}

std::pair<std::string, std::string> decode_cts(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(0) != kEncodeRows || x.dim(1) != kEncodeCols)
    throw ShapeError("decode_cts: expected [10,50], got " + shape_str(x.shape()));
  static const char* alphabet = "ACGU-";
  std::string mrow, wrow;
  for (int t = 0; t < kEncodeCols; ++t) {
    int mc = -1, wc = -1;
    for (int c = 0; c < 5; ++c) {
      if (x[c * kEncodeCols + t] == 1.0) mc = c;
      if (x[(5 + c) * kEncodeCols + t] == 1.0) wc = c;
    }
    if (mc < 0 && wc < 0) break;  // padding starts
    if (mc < 0 || wc < 0) throw ShapeError("decode_cts: half-empty column");
    mrow.push_back(alphabet[mc]);
    wrow.push_back(alphabet[wc]);
  }
  return {mrow, wrow};
}

Bag scan(const NucSeq& mirna, const NucSeq& utr, const std::string& pair_id,
         double threshold, ScanDiagnostics* diag) {
  if (utr.size() < kWindowLen)
    throw ShapeError("sequence shorter than window: |utr| = " +
                     std::to_string(utr.size()));
  Bag bag;
  bag.pair_id = pair_id;
  ScanDiagnostics local;
  for (int ws = 0; ws + kWindowLen <= utr.size(); ++ws) {
    ++local.windows;
    const std::string_view window(utr.symbols.data() + ws, kWindowLen);
    EsaAlignment a = esa_align(mirna, window);
    if (a.score < threshold) {
      ++local.below_threshold;
      continue;
    }
    auto [mrow, wrow] = gapped_rows(mirna, window, a);
    if (static_cast<int>(mrow.size()) > kEncodeCols) {
      ++local.too_wide;
      continue;
    }
    CtsCandidate cand;
    cand.index = bag.n();
    cand.window_start = ws;
    cand.p = (ws + kWindowLen / 2.0) / utr.size();
    cand.s_esa = a.score;
    cand.x = encode_rows(mrow, wrow);
    bag.candidates.push_back(std::move(cand));
  }
  if (diag) *diag = local;
  return bag;
}

}  // namespace brmil
