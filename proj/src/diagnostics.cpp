#include "focusft/diagnostics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "focusft/plot.hpp"

namespace focusft {

std::string region_tag_name(RegionTag tag) {
  switch (tag) {
    case RegionTag::SinkWindow: return "SinkWindow";
    case RegionTag::SystemUser: return "SystemUser";
    case RegionTag::ToolResponse: return "ToolResponse";
    case RegionTag::AssistantResponse: return "AssistantResponse";
    case RegionTag::Filler: return "Filler";
  }
  fail("region_tag_name: unknown tag");
}

RegionTag region_tag_from_name(const std::string& name) {
  if (name == "SinkWindow") return RegionTag::SinkWindow;
  if (name == "SystemUser") return RegionTag::SystemUser;
  if (name == "ToolResponse") return RegionTag::ToolResponse;
  if (name == "AssistantResponse") return RegionTag::AssistantResponse;
  if (name == "Filler") return RegionTag::Filler;
  fail("region_tag_from_name: unknown tag: " + name);
}

void RegionMap::validate(int seq_len) const {
  check(sink_window_width >= 1, "RegionMap: sink window must be >= 1");
  std::vector<char> seen(seq_len, 0);
  bool has_sink = false;
  for (const Range& r : ranges) {
    check(r.start >= 0 && r.start < r.end && r.end <= seq_len,
          "RegionMap: range out of bounds");
    for (int i = r.start; i < r.end; ++i) {
      check(!seen[i], "RegionMap: overlapping regions");
      seen[i] = 1;
    }
    if (r.tag == RegionTag::SinkWindow) {
      check(r.start == 0 && r.end == sink_window_width,
            "RegionMap: SinkWindow must be positions [0, w)");
      has_sink = true;
    }
  }
  check(has_sink, "RegionMap: missing SinkWindow range");
}

bool RegionMap::covers_exactly(int seq_len) const {
  std::vector<char> seen(seq_len, 0);
  for (const Range& r : ranges)
    for (int i = r.start; i < r.end; ++i) seen[i] = 1;
  for (char c : seen)
    if (!c) return false;
  return true;
}

namespace {

std::vector<int> query_rows(const AttentionTrace& trace, const Segmentation& seg,
                            bool include_context) {
  check(trace.enabled && !trace.alpha.empty(), "diagnostics: trace is empty");
  check(seg.length() == trace.seq_len, "diagnostics: segmentation/trace length mismatch");
  std::vector<int> rows;
  for (int i = 0; i < seg.length(); ++i)
    if (include_context || seg.is_response(i)) rows.push_back(i);
  check(!rows.empty(), "diagnostics: no query positions (empty response set)");
  return rows;
}

}  // namespace

std::pair<std::vector<double>, double> sink_mass(const AttentionTrace& trace,
                                                 const Segmentation& seg, int w,
                                                 bool include_context_queries) {
  const std::vector<int> rows = query_rows(trace, seg, include_context_queries);
  const int t = trace.seq_len;
  const int width = std::min(w, t);
  std::vector<double> per_layer;
  per_layer.reserve(trace.alpha.size());
  for (const auto& layer : trace.alpha) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& head : layer) {
      for (int i : rows) {
        const double* row = head.data() + static_cast<std::size_t>(i) * t;
        for (int j = 0; j < width; ++j) acc += row[j];
        ++count;
      }
    }
    per_layer.push_back(acc / static_cast<double>(count));
  }
  double mean = 0.0;
  for (double v : per_layer) mean += v;
  mean /= static_cast<double>(per_layer.size());
  return {per_layer, mean};
}

std::map<std::string, double> region_budget(const AttentionTrace& trace,
                                            const Segmentation& seg,
                                            const RegionMap& regions,
                                            bool include_context_queries) {
  const std::vector<int> rows = query_rows(trace, seg, include_context_queries);
  const int t = trace.seq_len;
  regions.validate(t);
  std::map<std::string, double> out;
  for (const auto& r : regions.ranges) out[region_tag_name(r.tag)] = 0.0;
  std::size_t count = 0;
  for (const auto& layer : trace.alpha) {
    for (const auto& head : layer) {
      for (int i : rows) {
        const double* row = head.data() + static_cast<std::size_t>(i) * t;
        for (const auto& r : regions.ranges) {
          double m = 0.0;
          for (int j = r.start; j < r.end; ++j) m += row[j];
          out[region_tag_name(r.tag)] += m;
        }
        ++count;
      }
    }
  }
  for (auto& [tag, v] : out) v /= static_cast<double>(count);
  return out;
}

std::vector<double> positional_profile(const AttentionTrace& trace,
                                       const Segmentation& seg,
                                       bool include_context_queries) {
  const std::vector<int> rows = query_rows(trace, seg, include_context_queries);
  const int t = trace.seq_len;
  std::vector<double> profile(t, 0.0);
  std::size_t count = 0;
  for (const auto& layer : trace.alpha) {
    for (const auto& head : layer) {
      for (int i : rows) {
        const double* row = head.data() + static_cast<std::size_t>(i) * t;
        for (int j = 0; j < t; ++j) profile[j] += row[j];
        ++count;
      }
    }
  }
  for (double& v : profile) v /= static_cast<double>(count);
  return profile;
}

double context_engagement(const std::map<std::string, double>& budget) {
  double e = 0.0;
  auto su = budget.find("SystemUser");
  auto tr = budget.find("ToolResponse");
  check(su != budget.end() && tr != budget.end(),
        "context_engagement: budget lacks context-content regions");
  e = su->second + tr->second;
  return e;
}

void heatmap_export(const AttentionTrace& trace, int layer,
                    const std::string& csv_path, const std::string& svg_path,
                    const RegionMap* regions) {
  check(trace.enabled && layer >= 0 &&
            layer < static_cast<int>(trace.alpha.size()),
        "heatmap_export: layer out of range");
  const int t = trace.seq_len;
  const auto& heads = trace.alpha[layer];
  check(!heads.empty(), "heatmap_export: layer has no heads");
  std::vector<double> avg(static_cast<std::size_t>(t) * t, 0.0);
  for (const auto& head : heads)
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += head[i];
  for (double& v : avg) v /= static_cast<double>(heads.size());

  std::ofstream csv(csv_path);
  check(csv.good(), "heatmap_export: cannot open " + csv_path);
  char buf[32];
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", avg[static_cast<std::size_t>(i) * t + j]);
      csv << buf << (j + 1 == t ? '\n' : ',');
    }
  }
  check(csv.good(), "heatmap_export: CSV write failed");

  std::vector<int> boundaries;
  if (regions) {
    for (const auto& r : regions->ranges)
      if (r.start > 0) boundaries.push_back(r.start);
  }
  svg_heatmap(avg, t, boundaries, svg_path);
}

AttentionSummary summarize(const AttentionTrace& trace, const Segmentation& seg,
                           const RegionMap& regions, int w,
                           bool include_context_queries) {
  AttentionSummary s;
  auto [per_layer, mean] = sink_mass(trace, seg, w, include_context_queries);
  s.sink_mass_per_layer = std::move(per_layer);
  s.sink_mass_mean = mean;
  s.region_budget = region_budget(trace, seg, regions, include_context_queries);
  s.positional_profile = positional_profile(trace, seg, include_context_queries);
  s.context_engagement = context_engagement(s.region_budget);
  s.sink_window_width = w;
  s.layer_count = static_cast<int>(s.sink_mass_per_layer.size());
  return s;
}

std::string AttentionSummary::to_json() const {
  std::ostringstream out;
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "{\"sink_mass_per_layer\":[";
  for (std::size_t i = 0; i < sink_mass_per_layer.size(); ++i)
    out << (i ? "," : "") << num(sink_mass_per_layer[i]);
  out << "],\"sink_mass_mean\":" << num(sink_mass_mean);
  out << ",\"region_budget\":{";
  bool first = true;
  for (const auto& [tag, v] : region_budget) {
    out << (first ? "" : ",") << "\"" << tag << "\":" << num(v);
    first = false;
  }
  out << "},\"positional_profile\":[";
  for (std::size_t i = 0; i < positional_profile.size(); ++i)
    out << (i ? "," : "") << num(positional_profile[i]);
  out << "],\"context_engagement\":" << num(context_engagement);
  out << ",\"w\":" << sink_window_width;
  out << ",\"layer_count\":" << layer_count << "}";
  return out.str();
}

}  // namespace focusft
