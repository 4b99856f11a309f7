#pragma once

// Per-domain composition of a selection and target-domain comparison
// metrics.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alda/corpus_io.hpp"
#include "alda/selector.hpp"

namespace alda {

struct DomainComposition {
  std::string domain;
  double selected_hours = 0.0;
  double pool_hours = 0.0;
  double percent_of_domain = 0.0;  // 0 when the domain has no pool hours
};

struct CompositionReport {
  // Sorted by selected hours (descending), then domain name.
  std::vector<DomainComposition> domains;
  double selected_hours = 0.0;
  double pool_hours = 0.0;
};

// Throws ValidationError when a selected id is missing from the manifest.
CompositionReport make_report(const SelectionResult& selection, const Manifest& pool);

// Aligned text table: Component | Duration (hours) | Percentage of domain.
std::string render_report(const CompositionReport& report);
// Tab-separated: domain, selected_hours, pool_hours, percent_of_domain; last
// row is "total".
std::string report_tsv(const CompositionReport& report);

struct SelectionMetrics {
  std::string name;
  std::size_t utterances = 0;
  double hours = 0.0;
  // Selected target hours / pool target hours.
  double recall = 0.0;
  // Selected target hours / selected hours (0 for an empty selection).
  double precision = 0.0;
  // precision / (pool target hours / pool hours).
  double enrichment = 0.0;
};

SelectionMetrics evaluate_selection(std::string name, const SelectionResult& selection,
                                    const Manifest& pool, std::string_view target_domain);

std::vector<SelectionMetrics> compare(
    std::span<const std::pair<std::string, SelectionResult>> selections, const Manifest& pool,
    std::string_view target_domain);

std::string render_comparison(std::span<const SelectionMetrics> rows);

}  // namespace alda
