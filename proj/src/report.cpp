#include "alda/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

#include "alda/error.hpp"

namespace alda {

namespace {

std::unordered_map<std::string_view, const Utterance*> by_id(const Manifest& pool) {
  std::unordered_map<std::string_view, const Utterance*> m;
  for (const auto& u : pool.utterances) m.emplace(u.id, &u);
  return m;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

CompositionReport make_report(const SelectionResult& selection, const Manifest& pool) {
  std::map<std::string, DomainComposition> acc;
  CompositionReport report;
  for (const auto& u : pool.utterances) {
    auto& row = acc[u.domain_tag];
    row.domain = u.domain_tag;
    row.pool_hours += pool.hours(u);
  }
  const auto index = by_id(pool);
  for (const auto& s : selection.selected) {
    auto it = index.find(s.utt_id);
    if (it == index.end()) throw ValidationError("report: '" + s.utt_id + "' is not in the pool");
    acc[it->second->domain_tag].selected_hours += pool.hours(*it->second);
  }
  for (auto& [_, row] : acc) {
    row.percent_of_domain = row.pool_hours > 0.0 ? 100.0 * row.selected_hours / row.pool_hours : 0.0;
    report.selected_hours += row.selected_hours;
    report.pool_hours += row.pool_hours;
    report.domains.push_back(row);
  }
  std::stable_sort(report.domains.begin(), report.domains.end(),
                   [](const DomainComposition& a, const DomainComposition& b) {
                     return a.selected_hours > b.selected_hours;
                   });
  return report;
}

std::string render_report(const CompositionReport& report) {
  std::size_t width = std::string_view("Component").size();
  for (const auto& d : report.domains) width = std::max(width, d.domain.size());
  width = std::max(width, std::string_view("Total").size());
  // One decimal at corpus scale; small synthetic pools would print zeros.
  const int prec = report.pool_hours >= 10.0 ? 1 : 4;
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s | %16s | %20s\n", static_cast<int>(width), "Component",
                "Duration (hours)", "Percentage of domain");
  os << line << std::string(width + 42, '-') << '\n';
  for (const auto& d : report.domains) {
    std::snprintf(line, sizeof line, "%-*s | %16.*f | %19.1f%%\n", static_cast<int>(width),
                  d.domain.c_str(), prec, d.selected_hours, d.percent_of_domain);
    os << line;
  }
  os << std::string(width + 42, '-') << '\n';
  std::snprintf(line, sizeof line, "%-*s | %16.*f | %20s\n", static_cast<int>(width), "Total",
                prec, report.selected_hours, "n/a");
  os << line;
  return os.str();
}

std::string report_tsv(const CompositionReport& report) {
  std::ostringstream os;
  os << "domain\tselected_hours\tpool_hours\tpercent_of_domain\n";
  for (const auto& d : report.domains) {
    os << d.domain << '\t' << fmt("%.6f", d.selected_hours) << '\t' << fmt("%.6f", d.pool_hours)
       << '\t' << fmt("%.4f", d.percent_of_domain) << '\n';
  }
  const double pct = report.pool_hours > 0.0 ? 100.0 * report.selected_hours / report.pool_hours : 0.0;
  os << "total\t" << fmt("%.6f", report.selected_hours) << '\t' << fmt("%.6f", report.pool_hours)
     << '\t' << fmt("%.4f", pct) << '\n';
  return os.str();
}

SelectionMetrics evaluate_selection(std::string name, const SelectionResult& selection,
                                    const Manifest& pool, std::string_view target_domain) {
  double pool_target = 0.0, pool_total = 0.0;
  for (const auto& u : pool.utterances) {
    const double h = pool.hours(u);
    pool_total += h;
    if (u.domain_tag == target_domain) pool_target += h;
  }
  if (pool_target <= 0.0) {
    throw ValidationError("compare: pool has no hours of target domain '" +
                          std::string(target_domain) + "'");
  }
  const auto index = by_id(pool);
  SelectionMetrics m;
  m.name = std::move(name);
  double sel_target = 0.0;
  for (const auto& s : selection.selected) {
    auto it = index.find(s.utt_id);
    if (it == index.end()) throw ValidationError("compare: '" + s.utt_id + "' is not in the pool");
    const double h = pool.hours(*it->second);
    m.hours += h;
    if (it->second->domain_tag == target_domain) sel_target += h;
  }
  m.utterances = selection.selected.size();
  m.recall = sel_target / pool_target;
  m.precision = m.hours > 0.0 ? sel_target / m.hours : 0.0;
  m.enrichment = m.precision / (pool_target / pool_total);
  return m;
}

std::vector<SelectionMetrics> compare(
    std::span<const std::pair<std::string, SelectionResult>> selections, const Manifest& pool,
    std::string_view target_domain) {
  std::vector<SelectionMetrics> rows;
  for (const auto& [name, sel] : selections) {
    rows.push_back(evaluate_selection(name, sel, pool, target_domain));
  }
  return rows;
}

std::string render_comparison(std::span<const SelectionMetrics> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s | %10s | %10s | %7s | %9s | %10s\n",
                static_cast<int>(width), "Method", "Utterances", "Hours", "Recall", "Precision",
                "Enrichment");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s | %10zu | %10.3f | %7.3f | %9.3f | %10.3f\n",
                  static_cast<int>(width), r.name.c_str(), r.utterances, r.hours, r.recall,
                  r.precision, r.enrichment);
    os << line;
  }
  return os.str();
}

}  // namespace alda
