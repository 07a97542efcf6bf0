#include "focusft/masking.hpp"

#include <sstream>

namespace focusft {

std::vector<int> Segmentation::response_positions() const {
  std::vector<int> out;
  for (int i = 0; i < length(); ++i)
    if (is_response(i)) out.push_back(i);
  return out;
}

std::vector<int> Segmentation::context_positions() const {
  std::vector<int> out;
  for (int i = 0; i < length(); ++i)
    if (is_context(i)) out.push_back(i);
  return out;
}

void Segmentation::validate() const {
  check(!labels.empty(), "Segmentation: empty");
  check(labels.size() == turn_ids.size(), "Segmentation: labels/turn_ids size mismatch");
  for (int i = 1; i < length(); ++i) {
    check(turn_ids[i] >= turn_ids[i - 1], "Segmentation: turn ids must be non-decreasing");
    if (labels[i] != labels[i - 1])
      check(turn_ids[i] != turn_ids[i - 1],
            "Segmentation: label change inside a turn");
  }
}

std::string Segmentation::serialize() const {
  std::ostringstream out;
  for (int i = 0; i < length(); ++i)
    out << i << '\t' << (is_context(i) ? 'C' : 'R') << '\t' << turn_ids[i] << '\n';
  return out.str();
}

Segmentation Segmentation::parse(const std::string& text) {
  Segmentation seg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int idx = 0, turn = 0;
    char label = 0;
    check(static_cast<bool>(ls >> idx >> label >> turn), "Segmentation::parse: bad line");
    check(idx == seg.length(), "Segmentation::parse: index out of order");
    check(label == 'C' || label == 'R', "Segmentation::parse: unknown label");
    seg.labels.push_back(label == 'C' ? TokenLabel::Context : TokenLabel::Response);
    seg.turn_ids.push_back(turn);
  }
  seg.validate();
  return seg;
}

namespace {
long g_focusft_mask_builds = 0;
}  // namespace

long focusft_mask_build_count() { return g_focusft_mask_builds; }

Tensor build_focusft_mask(const Segmentation& seg) {
  ++g_focusft_mask_builds;
  seg.validate();
  const int t = seg.length();
  Tensor m({t, t});
  for (int i = 0; i < t; ++i) {
    double* row = m.values().data() + static_cast<size_t>(i) * t;
    for (int j = 0; j < t; ++j) {
      const bool visible = (seg.is_context(i) && seg.is_context(j)) ||
                           (seg.is_response(i) && j <= i);
      row[j] = visible ? 0.0 : kMaskedLogit;
    }
  }
  return m;
}

Tensor build_causal_mask(int t) {
  check(t >= 1, "build_causal_mask: T must be >= 1");
  Tensor m({t, t});
  for (int i = 0; i < t; ++i) {
    double* row = m.values().data() + static_cast<size_t>(i) * t;
    for (int j = 0; j < t; ++j) row[j] = j <= i ? 0.0 : kMaskedLogit;
  }
  return m;
}

std::vector<MaskViolation> validate_mask(const Tensor& m, const Segmentation& seg) {
  const int t = seg.length();
  check(m.shape == std::vector<int>({t, t}), "validate_mask: shape mismatch");
  std::vector<MaskViolation> out;
  const Tensor ref = build_focusft_mask(seg);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      const double expected = ref.values()[static_cast<size_t>(i) * t + j];
      const double found = m.values()[static_cast<size_t>(i) * t + j];
      if (expected != found) out.push_back(MaskViolation{i, j, expected, found});
    }
  }
  return out;
}

}  // namespace focusft
