#pragma once

#include <map>
#include <string>
#include <vector>

#include "focusft/masking.hpp"
#include "focusft/model.hpp"

namespace focusft {

enum class RegionTag { SinkWindow, SystemUser, ToolResponse, AssistantResponse, Filler };

std::string region_tag_name(RegionTag tag);
RegionTag region_tag_from_name(const std::string& name);

// Disjoint, ordered token-index ranges [start, end) with semantic tags.
// SinkWindow is always positions [0, sink_window_width).
struct RegionMap {
  struct Range {
    RegionTag tag;
    int start = 0;
    int end = 0;  // exclusive
  };
  std::vector<Range> ranges;
  int sink_window_width = 5;

  void validate(int seq_len) const;
  bool covers_exactly(int seq_len) const;
};

struct AttentionSummary {
  std::vector<double> sink_mass_per_layer;
  double sink_mass_mean = 0.0;
  std::map<std::string, double> region_budget;
  std::vector<double> positional_profile;
  double context_engagement = 0.0;
  int sink_window_width = 5;
  int layer_count = 0;

  std::string to_json() const;
};

// All metrics average response-query attention unless include_context_queries
// is set (an exploration flag, off by default).

// Mean over heads and response queries of the mass on the first w keys;
// one value per layer plus the unweighted layer mean.
std::pair<std::vector<double>, double> sink_mass(const AttentionTrace& trace,
                                                 const Segmentation& seg, int w,
                                                 bool include_context_queries = false);

std::map<std::string, double> region_budget(const AttentionTrace& trace,
                                            const Segmentation& seg,
                                            const RegionMap& regions,
                                            bool include_context_queries = false);

std::vector<double> positional_profile(const AttentionTrace& trace,
                                       const Segmentation& seg,
                                       bool include_context_queries = false);

// Sum of the context-content shares (SystemUser + ToolResponse).
double context_engagement(const std::map<std::string, double>& budget);

// Head-averaged T x T matrix of one layer as CSV (row = query) and a
// grayscale SVG with region boundary lines.
void heatmap_export(const AttentionTrace& trace, int layer,
                    const std::string& csv_path, const std::string& svg_path,
                    const RegionMap* regions = nullptr);

AttentionSummary summarize(const AttentionTrace& trace, const Segmentation& seg,
                           const RegionMap& regions, int w = 5,
                           bool include_context_queries = false);

}  // namespace focusft
