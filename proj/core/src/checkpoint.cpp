#include "brmil/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "brmil/seqscan.hpp"  // ParseError

namespace brmil {

namespace {

constexpr char kMagic[8] = {'B', 'R', 'M', 'I', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoints assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ParseError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckp) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckp.meta.size()));
  out.write(ckp.meta.data(), static_cast<std::streamsize>(ckp.meta.size()));
  put_u32(out, static_cast<std::uint32_t>(ckp.tensors.size()));
  for (const auto& [name, t] : ckp.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw ParseError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckp;
  const std::uint32_t meta_len = get_u32(in);
  ckp.meta.resize(meta_len);
  in.read(ckp.meta.data(), meta_len);
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = get_u32(in);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<int>(get_u32(in)));
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw ParseError("checkpoint: truncated tensor " + name);
    ckp.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckp;
}

void collect_params(Checkpoint& ckp, const ParamSet& params, const std::string& prefix) {
  for (const auto& [name, t] : params.items())
    ckp.tensors.emplace_back(prefix + name, t.clone());
}

void restore_params(ParamSet& params, const Checkpoint& ckp, const std::string& prefix) {
  for (auto& [name, t] : params.items()) {
    const std::string want = prefix + name;
    bool found = false;
    for (const auto& [cn, ct] : ckp.tensors) {
      if (cn != want) continue;
      if (ct.shape() != t.shape())
        throw ShapeError("checkpoint: shape of " + want + " is " + shape_str(ct.shape()) +
                         ", expected " + shape_str(t.shape()));
      Tensor dst = t;
      std::copy(ct.data(), ct.data() + ct.numel(), dst.data());
      found = true;
      break;
    }
    if (!found) throw ParseError("checkpoint: missing tensor " + want);
  }
}

}  // namespace brmil
