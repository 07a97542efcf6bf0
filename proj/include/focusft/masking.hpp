#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "focusft/tensor.hpp"

namespace focusft {

enum class TokenLabel { Context, Response };

// Per-token context/response labels plus non-decreasing turn ids. Positions
// are 0-indexed throughout.
struct Segmentation {
  std::vector<TokenLabel> labels;
  std::vector<int> turn_ids;

  int length() const { return static_cast<int>(labels.size()); }
  bool is_context(int i) const { return labels[i] == TokenLabel::Context; }
  bool is_response(int i) const { return labels[i] == TokenLabel::Response; }
  std::vector<int> response_positions() const;
  std::vector<int> context_positions() const;

  // Throws on empty input, size mismatch, or turn boundaries that do not
  // align with label changes.
  void validate() const;

  // One line per token: index<TAB>label<TAB>turn_id.
  std::string serialize() const;
  static Segmentation parse(const std::string& text);
};

struct MaskViolation {
  int i = 0;
  int j = 0;
  double expected = 0.0;
  double found = 0.0;
};

// Bidirectional-context mask: M[i,j] = 0 iff (i,j both context) or
// (i response and j <= i); -inf otherwise. Context queries never see
// response keys, and context visibility spans all context turns.
Tensor build_focusft_mask(const Segmentation& seg);

Tensor build_causal_mask(int t);

// Empty iff m matches the bidirectional-context construction for seg.
std::vector<MaskViolation> validate_mask(const Tensor& m, const Segmentation& seg);

// Build counter for contract checks (evaluation must never construct the
// bidirectional-context mask).
long focusft_mask_build_count();

}  // namespace focusft
