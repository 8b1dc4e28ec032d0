// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/attnstats.hpp"

#include <cmath>
#include <iomanip>

namespace earn {

namespace {

void check_distribution(std::span<const float> p) {
  EARN_EXPECTS(!p.empty(), "attention distribution is empty");
  double sum = 0.0;
  for (float v : p) {
    EARN_EXPECTS(v >= 0.0f, "attention distribution has a negative entry");
    sum += v;
  }
  EARN_EXPECTS(std::abs(sum - 1.0) <= 1e-3, "attention distribution does not sum to 1");
}

void check_sink_length(std::span<const float> p) {
  EARN_EXPECTS(p.size() >= 2 * kSinkWindow, "sink measures need at least 6 positions");
}

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> value() const { return n == 0 ? std::nullopt : std::optional<double>(sum / n); }
};

struct AggregateBuilder {
  Mean sparsity, head, tail;
  void add(const HeadStats& s) {
    sparsity.add(s.sparsity);
    if (s.sink_head) head.add(*s.sink_head);
    if (s.sink_tail) tail.add(*s.sink_tail);
  }
  StatsAggregate build() const { return {sparsity.value(), head.value(), tail.value()}; }
};

void put(std::ostream& out, const std::optional<double>& v) {
  if (v) {
    out << *v;
  } else {
    out << "NA";
  }
}

}  // namespace

double sparsity(std::span<const float> p, double epsilon) {
  check_distribution(p);
  std::size_t above = 0;
  for (float v : p) above += static_cast<double>(v) > epsilon ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(p.size());
}

double sink_head(std::span<const float> p) {
  check_sink_length(p);
  double s = 0.0;
  for (std::size_t i = 0; i < kSinkWindow; ++i) s += p[i];
  return s;
}

double sink_tail(std::span<const float> p) {
  check_sink_length(p);
  double s = 0.0;
  for (std::size_t i = p.size() - kSinkWindow; i < p.size(); ++i) s += p[i];
  return s;
}

AttentionStats summarize(const AttentionTrace& trace, std::size_t early_layer_cutoff, double epsilon) {
  EARN_EXPECTS(!trace.empty(), "summarize: no traces");
  AttentionStats stats;
  stats.early_layer_cutoff = early_layer_cutoff;
  AggregateBuilder early, latter, overall;
  for (std::size_t l = 0; l < trace.last_row.size(); ++l) {
    for (std::size_t h = 0; h < trace.last_row[l].size(); ++h) {
      const auto& p = trace.last_row[l][h];
      HeadStats s;
      s.layer = l + 1;
      s.head = h;
      s.sparsity = sparsity(p, epsilon);
      if (p.size() >= 2 * kSinkWindow) {
        s.sink_head = sink_head(p);
        s.sink_tail = sink_tail(p);
      }
      (s.layer <= early_layer_cutoff ? early : latter).add(s);
      overall.add(s);
      stats.rows.push_back(s);
    }
  }
  stats.early = early.build();
  stats.latter = latter.build();
  stats.overall = overall.build();
  return stats;
}

AttentionStats summarize(std::span<const AttentionTrace> traces, std::size_t early_layer_cutoff, double epsilon) {
  EARN_EXPECTS(!traces.empty(), "summarize: no traces");
  std::vector<AttentionStats> each;
  for (const auto& t : traces) each.push_back(summarize(t, early_layer_cutoff, epsilon));
  const std::size_t rows = each.front().rows.size();
  AttentionStats stats;
  stats.early_layer_cutoff = early_layer_cutoff;
  AggregateBuilder early, latter, overall;
  for (std::size_t i = 0; i < rows; ++i) {
    Mean sp, head, tail;
    for (const auto& e : each) {
      EARN_EXPECTS(e.rows.size() == rows, "summarize: traces differ in layers or heads");
      const HeadStats& s = e.rows[i];
      (s.layer <= early_layer_cutoff ? early : latter).add(s);
      overall.add(s);
      sp.add(s.sparsity);
      if (s.sink_head) head.add(*s.sink_head);
      if (s.sink_tail) tail.add(*s.sink_tail);
    }
    HeadStats m = each.front().rows[i];
    m.sparsity = *sp.value();
    m.sink_head = head.value();
    m.sink_tail = tail.value();
    stats.rows.push_back(m);
  }
  stats.early = early.build();
  stats.latter = latter.build();
  stats.overall = overall.build();
  return stats;
}

void write_csv(std::ostream& out, const AttentionStats& stats) {
  const auto old_precision = out.precision(9);
  out << "layer,head,sparsity,sink_head,sink_tail\n";
  for (const auto& r : stats.rows) {
    out << r.layer << ',' << r.head << ',' << r.sparsity << ',';
    put(out, r.sink_head);
    out << ',';
    put(out, r.sink_tail);
    out << '\n';
  }
  auto footer = [&](const char* label, const StatsAggregate& a) {
    out << label << ",mean,";
    put(out, a.sparsity);
    out << ',';
    put(out, a.sink_head);
    out << ',';
    put(out, a.sink_tail);
    out << '\n';
  };
  footer("early", stats.early);
  footer("latter", stats.latter);
  footer("all", stats.overall);
  out.precision(old_precision);
}

}  // namespace earn
