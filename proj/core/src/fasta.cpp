#include "brmil/fasta.hpp"

#include <fstream>

#include "brmil/seqscan.hpp"

namespace brmil {

std::vector<FastaRecord> read_fasta(std::istream& in) {
  std::vector<FastaRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      FastaRecord rec;
      const std::size_t sp = line.find_first_of(" \t", 1);
      rec.id = line.substr(1, sp == std::string::npos ? std::string::npos : sp - 1);
      rec.line = lineno;
      out.push_back(std::move(rec));
    } else {
      if (out.empty())
        throw ParseError("FASTA line " + std::to_string(lineno) +
                         ": sequence data before any '>' header");
      out.back().seq += line;
    }
  }
  return out;
}

std::vector<FastaRecord> read_fasta_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open FASTA file: " + path);
  return read_fasta(in);
}

}  // namespace brmil
