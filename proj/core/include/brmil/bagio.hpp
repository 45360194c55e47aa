#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "brmil/seqscan.hpp"
#include "brmil/tensor.hpp"

namespace brmil {

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(std::string_view s);

/// Tensor payloads travel as base64 of the raw little-endian 64-bit floats.
std::string tensor_to_b64(const Tensor& t);
Tensor tensor_from_b64(const std::string& s, Shape shape);

inline constexpr const char* kBagSchema = "brmil.bags.v1";

/// Line-delimited JSON: one schema header line, then one record per pair
/// with pair_id, optional label, and the candidate array.
void write_bags(std::ostream& out, const std::vector<Bag>& bags);
std::vector<Bag> read_bags(std::istream& in);
void write_bags_file(const std::string& path, const std::vector<Bag>& bags);
std::vector<Bag> read_bags_file(const std::string& path);

}  // namespace brmil
