#pragma once

#include <istream>
#include <string>
#include <utility>
#include <vector>

namespace brmil {

struct FastaRecord {
  std::string id;   // first whitespace-delimited token of the header
  std::string seq;  // raw letters, not yet alphabet-checked
  int line = 0;     // 1-based line number of the '>' header
};

/// Minimal FASTA reader: '>' headers, sequence lines concatenated, blank
/// lines ignored. Throws ParseError on sequence data before any header.
std::vector<FastaRecord> read_fasta(std::istream& in);
std::vector<FastaRecord> read_fasta_file(const std::string& path);

}  // namespace brmil
