#include "brmil/bagio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace brmil {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

static_assert(std::endian::native == std::endian::little,
              "tensor payloads assume a little-endian host");

}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    const std::uint32_t b0 = data[i];
    const std::uint32_t b1 = i + 1 < len ? data[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < len ? data[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out += kB64[(triple >> 18) & 63];
    out += kB64[(triple >> 12) & 63];
    out += i + 1 < len ? kB64[(triple >> 6) & 63] : '=';
    out += i + 2 < len ? kB64[triple & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view s) {
  if (s.size() % 4 != 0) throw ParseError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != s.size() || k < 2) throw ParseError("base64: bad padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ParseError("base64: data after padding");
        vals[k] = b64_value(c);
        if (vals[k] < 0) throw ParseError(std::string("base64: bad symbol '") + c + "'");
      }
    }
    const std::uint32_t triple = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                 (static_cast<std::uint32_t>(vals[1]) << 12) |
                                 (static_cast<std::uint32_t>(vals[2]) << 6) |
                                 static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<std::uint8_t>((triple >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((triple >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(triple & 0xff));
  }
  return out;
}

std::string tensor_to_b64(const Tensor& t) {
  return base64_encode(reinterpret_cast<const std::uint8_t*>(t.data()),
                       static_cast<std::size_t>(t.numel()) * sizeof(double));
}

Tensor tensor_from_b64(const std::string& s, Shape shape) {
  const std::vector<std::uint8_t> bytes = base64_decode(s);
  Tensor t = Tensor::zeros(std::move(shape));
  if (bytes.size() != static_cast<std::size_t>(t.numel()) * sizeof(double))
    throw ParseError("tensor payload is " + std::to_string(bytes.size()) +
                     " bytes, expected " + std::to_string(t.numel() * sizeof(double)));
  std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

void write_bags(std::ostream& out, const std::vector<Bag>& bags) {
  out << nlohmann::json{{"schema", kBagSchema}}.dump() << '\n';
  for (const Bag& bag : bags) {
    nlohmann::json rec;
    rec["pair_id"] = bag.pair_id;
    if (bag.label) rec["label"] = *bag.label;
    nlohmann::json cands = nlohmann::json::array();
    for (const CtsCandidate& c : bag.candidates) {
      nlohmann::json jc;
      jc["window_start"] = c.window_start;
      jc["p"] = c.p;
      jc["s_esa"] = c.s_esa;
      jc["x"] = tensor_to_b64(c.x);
      if (c.inst_label) jc["inst_label"] = *c.inst_label;
      cands.push_back(std::move(jc));
    }
    rec["candidates"] = std::move(cands);
    out << rec.dump() << '\n';
  }
}

std::vector<Bag> read_bags(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("bag stream: empty input");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.contains("schema") ||
      header["schema"] != kBagSchema)
    throw ParseError(std::string("bag stream: missing schema header ") + kBagSchema);

  std::vector<Bag> bags;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ParseError("bag stream: bad JSON on line " + std::to_string(lineno));
    Bag bag;
    bag.pair_id = rec.at("pair_id").get<std::string>();
    if (rec.contains("label")) bag.label = rec["label"].get<int>();
    for (const auto& jc : rec.at("candidates")) {
      CtsCandidate c;
      c.index = bag.n();
      c.window_start = jc.at("window_start").get<int>();
      c.p = jc.at("p").get<double>();
      c.s_esa = jc.at("s_esa").get<double>();
      c.x = tensor_from_b64(jc.at("x").get<std::string>(), {kEncodeRows, kEncodeCols});
      if (jc.contains("inst_label")) c.inst_label = jc["inst_label"].get<int>();
      bag.candidates.push_back(std::move(c));
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

void write_bags_file(const std::string& path, const std::vector<Bag>& bags) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  write_bags(out, bags);
}

std::vector<Bag> read_bags_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  return read_bags(in);
}

}  // namespace brmil
