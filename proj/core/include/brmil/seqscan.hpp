#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "brmil/tensor.hpp"

namespace brmil {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// RNA sequence over {A,C,G,U}. 'T' is normalized to 'U' at parse time; any
/// other symbol is a ParseError.
struct NucSeq {
  enum class Role { mirna, utr };
  std::string symbols;
  Role role = Role::utr;

  int size() const { return static_cast<int>(symbols.size()); }
};

NucSeq parse_seq(std::string_view raw, NucSeq::Role role);

/// 0=A, 1=C, 2=G, 3=U; throws ParseError for anything else.
int sym_index(char c);
char complement(char c);

inline constexpr int kWindowLen = 40;
inline constexpr int kSeedLen = 10;
inline constexpr int kEncodeRows = 10;
inline constexpr int kEncodeCols = 50;

/// One candidate target site: a 40-nt window that scored at or above the
/// alignment threshold.
struct CtsCandidate {
  int index = 0;         // 0..n-1 in ascending window_start
  int window_start = 0;  // 0-based offset into the 3'UTR
  double p = 0.0;        // length-normalized window center, in [0,1]
  double s_esa = 0.0;    // extended-seed alignment score
  Tensor x;              // [10,50] one-hot duplex encoding
  std::optional<int> inst_label;  // per-site supervision when known (synthetic data)
};

/// All candidate sites of one miRNA-mRNA pair, plus the optional pair label.
struct Bag {
  std::string pair_id;
  std::vector<CtsCandidate> candidates;
  std::optional<int> label;

  int n() const { return static_cast<int>(candidates.size()); }
};

/// Local alignment between the miRNA extended seed (5' positions 1-10) and
/// the reverse-complement reading of a 40-nt window. Intervals are inclusive,
/// 0-based; empty when score is 0. ops: 'M' aligned pair, 'D' seed symbol
/// against a gap, 'I' gap against a window symbol.
struct EsaAlignment {
  double score = 0.0;
  int seed_begin = 0, seed_end = -1;
  int rc_begin = 0, rc_end = -1;
  std::string ops;
};

/// Smith-Waterman local alignment in reverse-complement space:
/// match +1, G:U wobble +0.5, mismatch 0, gap -2. Deterministic traceback
/// (lowest end cell; diagonal preferred over up over left).
EsaAlignment esa_align(const NucSeq& mirna, std::string_view window);
double esa_score(const NucSeq& mirna, const NucSeq& window);

/// Two equal-length gapped rows of the duplex picture: the full miRNA 5'->3'
/// on top, the full window bottom, reversed (3'->5') in its original letters,
/// anchored so aligned symbols share a column. '-' marks gaps.
std::pair<std::string, std::string> gapped_rows(const NucSeq& mirna,
                                                std::string_view window,
                                                const EsaAlignment& a);

/// One-hot [10,50] encoding of the two gapped rows: channels 0-4 carry the
/// miRNA row over {A,C,G,U,-}, channels 5-9 the window row; columns past the
/// row length stay all-zero. Throws ShapeError when the rows exceed 50.
Tensor encode_rows(const std::string& mrow, const std::string& wrow);
Tensor encode_cts(const NucSeq& mirna, std::string_view window, const EsaAlignment& a);

/// Inverse of encode_rows (padding columns are dropped).
std::pair<std::string, std::string> decode_cts(const Tensor& x);

struct ScanDiagnostics {
  int windows = 0;
  int below_threshold = 0;
  int too_wide = 0;  // candidates dropped because the duplex picture exceeds 50 columns
};

/// Slides a 40-nt window over the 3'UTR at stride 1 and keeps every window
/// scoring >= threshold. Throws ShapeError when the UTR is shorter than the
/// window; an empty bag is a legal result.
Bag scan(const NucSeq& mirna, const NucSeq& utr, const std::string& pair_id = "",
         double threshold = 6.0, ScanDiagnostics* diag = nullptr);

}  // namespace brmil
