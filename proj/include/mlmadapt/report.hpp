#pragma once

#include <string>
#include <vector>

#include "mlmadapt/eval.hpp"

namespace mlmadapt {

struct ReportRow {
    std::string metric;
    std::string value_a;
    std::string value_b;
    int winner = 0;  // 0 none, 1 column A, 2 column B
};

struct ReportTable {
    std::string caption;
    std::string label_a;
    std::string label_b;
    std::vector<ReportRow> rows;
};

std::string format_fixed2(double v);    // "6.60"
std::string format_percent2(double v);  // 0.5255 -> "52.55%"

// Builds the comparison table: a perplexity row followed by one Top-k row
// per k, better value marked (lower perplexity, higher accuracy; ties get no
// mark). Refuses reports with different config digests or k lists.
ReportTable build_report_table(const EvalReport& a, const EvalReport& b,
                               const std::string& label_a, const std::string& label_b);

// Pure text rendering: identical tables produce byte-identical output.
std::string render_table(const ReportTable& table);

std::string render_report(const EvalReport& a, const EvalReport& b, const std::string& label_a,
                          const std::string& label_b);

// Appends the per-k 2x2 cells below a comparison table.
std::string render_tally(const ComparisonTally& tally, const std::string& label_a,
                         const std::string& label_b);

}  // namespace mlmadapt
