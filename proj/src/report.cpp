#include "mlmadapt/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace mlmadapt {
namespace {

// Better accuracy means a larger hits/labeled quotient; cross-multiplied in
// integers so the mark never disagrees with the exact counts.
int accuracy_winner(uint64_t hits_a, uint64_t labeled_a, uint64_t hits_b, uint64_t labeled_b) {
    const unsigned __int128 lhs =
        static_cast<unsigned __int128>(hits_a) * static_cast<unsigned __int128>(labeled_b);
    const unsigned __int128 rhs =
        static_cast<unsigned __int128>(hits_b) * static_cast<unsigned __int128>(labeled_a);
    if (lhs > rhs) return 1;
    if (rhs > lhs) return 2;
    return 0;
}

int perplexity_winner(const EvalReport& a, const EvalReport& b) {
    const double mean_a = a.nll_sum / static_cast<double>(a.labeled);
    const double mean_b = b.nll_sum / static_cast<double>(b.labeled);
    if (mean_a < mean_b) return 1;
    if (mean_b < mean_a) return 2;
    return 0;
}

std::string pad_right(const std::string& text, size_t width) {
    std::string out = text;
    if (out.size() < width) out.append(width - out.size(), ' ');
    return out;
}

}  // namespace

std::string format_fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string format_percent2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
    return buf;
}

ReportTable build_report_table(const EvalReport& a, const EvalReport& b,
                               const std::string& label_a, const std::string& label_b) {
    if (a.config_digest != b.config_digest)
        throw ConfigError("reports come from different eval configs (digest " +
                          to_hex(a.config_digest) + " vs " + to_hex(b.config_digest) +
                          "); refusing to compare");
    if (a.ks != b.ks) throw ConfigError("reports carry different k lists");
    if (a.labeled == 0 || b.labeled == 0) throw DataError("cannot tabulate an empty report");

    ReportTable table;
    table.label_a = label_a;
    table.label_b = label_b;
    table.caption = "Comparison of " + label_a + " and " + label_b;

    ReportRow ppl;
    ppl.metric = "Perplexity";
    ppl.value_a = format_fixed2(a.perplexity());
    ppl.value_b = format_fixed2(b.perplexity());
    ppl.winner = perplexity_winner(a, b);
    table.rows.push_back(std::move(ppl));

    for (size_t i = 0; i < a.ks.size(); ++i) {
        ReportRow row;
        row.metric = "Top-" + std::to_string(a.ks[i]);
        row.value_a = format_percent2(static_cast<double>(a.hits[i]) /
                                      static_cast<double>(a.labeled));
        row.value_b = format_percent2(static_cast<double>(b.hits[i]) /
                                      static_cast<double>(b.labeled));
        row.winner = accuracy_winner(a.hits[i], a.labeled, b.hits[i], b.labeled);
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string render_table(const ReportTable& table) {
    const std::string mark = " *";
    size_t w_metric = std::string("Metric").size();
    size_t w_a = table.label_a.size();
    size_t w_b = table.label_b.size();
    for (const ReportRow& row : table.rows) {
        w_metric = std::max(w_metric, row.metric.size());
        w_a = std::max(w_a, row.value_a.size() + (row.winner == 1 ? mark.size() : 0));
        w_b = std::max(w_b, row.value_b.size() + (row.winner == 2 ? mark.size() : 0));
    }

    std::ostringstream out;
    out << table.caption << "\n\n";
    out << pad_right("Metric", w_metric) << "  " << pad_right(table.label_a, w_a) << "  "
        << table.label_b << "\n";
    out << std::string(w_metric, '-') << "  " << std::string(w_a, '-') << "  "
        << std::string(w_b, '-') << "\n";
    for (const ReportRow& row : table.rows) {
        std::string cell_a = row.value_a + (row.winner == 1 ? mark : "");
        std::string cell_b = row.value_b + (row.winner == 2 ? mark : "");
        out << pad_right(row.metric, w_metric) << "  " << pad_right(cell_a, w_a) << "  "
            << cell_b << "\n";
    }
    return out.str();
}

std::string render_report(const EvalReport& a, const EvalReport& b, const std::string& label_a,
                          const std::string& label_b) {
    return render_table(build_report_table(a, b, label_a, label_b));
}

std::string render_tally(const ComparisonTally& tally, const std::string& label_a,
                         const std::string& label_b) {
    std::ostringstream out;
    out << "Paired outcomes over " << tally.labeled << " labeled positions (" << label_a
        << " vs " << label_b << ")\n";
    for (size_t i = 0; i < tally.ks.size(); ++i) {
        const TallyCells& c = tally.cells[i];
        out << "k=" << tally.ks[i] << ": both_hit=" << c.both_hit << " a_only=" << c.a_only
            << " b_only=" << c.b_only << " both_miss=" << c.both_miss << "\n";
    }
    return out.str();
}

}  // namespace mlmadapt
