#ifndef MAT_REPORT_HPP
#define MAT_REPORT_HPP

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mat/evaluation.hpp"
#include "mat/sweep.hpp"

namespace mat {

inline std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline void check_compatible(std::span<const EvalReport> reports)
{
    for (const auto& r : reports) {
        if (r.classes != reports.front().classes) {
            throw AggregationError("reports mix class counts (" + std::to_string(reports.front().classes) + " and " +
                                   std::to_string(r.classes) + ")");
        }
    }
}

// Flat rows: model, attack, accuracy.
inline std::string emit_csv(std::span<const EvalReport> reports)
{
    check_compatible(reports);
    std::string out = "model,attack,accuracy\n";
    for (const auto& r : reports) {
        for (const auto& a : r.attacks) {
            out += r.model + "," + a.id + "," + fixed(a.accuracy, 6) + "\n";
        }
    }
    return out;
}

inline std::string emit_json(std::span<const EvalReport> reports)
{
    check_compatible(reports);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        arr.push_back(report_to_json(r, false));
    }
    return arr.dump(2) + "\n";
}

// Attacks: Clean then one column per attack id.
// Types:   Clean, one column per perturbation type, R_avg, R_worst.
enum class TableLayout { Attacks, Types };

struct TableRow {
    EvalReport report;
    std::optional<EvalReport> baseline;  // adds a gain row under this one
};

struct TableColumns {
    std::vector<std::string> headers;
    std::vector<std::vector<std::optional<double>>> values;  // [row][column]
};

inline std::vector<std::optional<double>> table_values(const EvalReport& r, TableLayout layout,
                                                       const std::vector<std::string>& keys)
{
    std::vector<std::optional<double>> v{r.clean_accuracy};
    for (const auto& k : keys) {
        std::optional<double> cell;
        if (layout == TableLayout::Attacks) {
            for (const auto& a : r.attacks) {
                if (a.id == k) {
                    cell = a.accuracy;
                }
            }
        } else {
            for (const auto& t : r.per_type) {
                if (t.type == k) {
                    cell = t.accuracy;
                }
            }
        }
        v.push_back(cell);
    }
    if (layout == TableLayout::Types) {
        v.emplace_back(r.r_avg);
        v.emplace_back(r.r_worst);
    }
    return v;
}

inline TableColumns table_columns(std::span<const TableRow> rows, TableLayout layout)
{
    std::vector<std::string> keys;
    auto note = [&](const std::string& k) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            keys.push_back(k);
        }
    };
    for (const auto& row : rows) {
        if (layout == TableLayout::Attacks) {
            for (const auto& a : row.report.attacks) {
                note(a.id);
            }
        } else {
            for (const auto& t : row.report.per_type) {
                note(t.type);
            }
        }
    }
    TableColumns t;
    t.headers.emplace_back("Clean");
    for (const auto& k : keys) {
        std::string h = k;
        if (layout == TableLayout::Attacks) {
            std::transform(h.begin(), h.end(), h.begin(), [](unsigned char ch) { return std::toupper(ch); });
        }
        t.headers.push_back(h);
    }
    if (layout == TableLayout::Types) {
        t.headers.emplace_back("R_avg");
        t.headers.emplace_back("R_worst");
    }
    for (const auto& row : rows) {
        t.values.push_back(table_values(row.report, layout, keys));
    }
    return t;
}

// Per column: 2 for the best value (bold), 1 for the second-best distinct value (underline), else 0.
inline std::vector<std::vector<int>> column_marks(const TableColumns& t)
{
    std::vector<std::vector<int>> marks(t.values.size(), std::vector<int>(t.headers.size(), 0));
    for (std::size_t c = 0; c < t.headers.size(); ++c) {
        std::vector<double> distinct;
        for (const auto& row : t.values) {
            if (row[c]) {
                distinct.push_back(*row[c]);
            }
        }
        std::sort(distinct.begin(), distinct.end(), std::greater<>());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        for (std::size_t r = 0; r < t.values.size(); ++r) {
            if (!t.values[r][c] || distinct.empty()) {
                continue;
            }
            if (*t.values[r][c] == distinct[0]) {
                marks[r][c] = 2;
            } else if (distinct.size() > 1 && *t.values[r][c] == distinct[1]) {
                marks[r][c] = 1;
            }
        }
    }
    return marks;
}

// Accuracies in percent with two decimals; gain cells are percentage-point differences.
inline std::string emit_markdown(std::span<const TableRow> rows, TableLayout layout)
{
    std::vector<EvalReport> all;
    for (const auto& r : rows) {
        all.push_back(r.report);
        if (r.baseline) {
            all.push_back(*r.baseline);
        }
    }
    check_compatible(all);
    const TableColumns t = table_columns(rows, layout);
    const auto marks = column_marks(t);

    std::string out;
    if (layout == TableLayout::Types) {
        out += "Per-type accuracy counts an example as robust only if it survives every attack of that type.\n\n";
    }
    out += "| Model |";
    for (const auto& h : t.headers) {
        out += " " + h + " |";
    }
    out += "\n|---|";
    for (std::size_t c = 0; c < t.headers.size(); ++c) {
        out += "---|";
    }
    out += "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out += "| " + rows[r].report.model + " |";
        for (std::size_t c = 0; c < t.headers.size(); ++c) {
            const auto& v = t.values[r][c];
            std::string cell = v ? fixed(100.0 * *v, 2) : "-";
            if (marks[r][c] == 2) {
                cell = "**" + cell + "**";
            } else if (marks[r][c] == 1) {
                cell = "<u>" + cell + "</u>";
            }
            out += " " + cell + " |";
        }
        out += "\n";
        if (rows[r].baseline) {
            out += "| (vs " + rows[r].baseline->model + ") |";
            const TableColumns pair = [&] {
                std::vector<TableRow> both{rows[r], TableRow{*rows[r].baseline, std::nullopt}};
                return table_columns(both, layout);
            }();
            // Re-map the pair's columns onto the table's columns by header.
            for (std::size_t c = 0; c < t.headers.size(); ++c) {
                std::string cell = "-";
                const auto it = std::find(pair.headers.begin(), pair.headers.end(), t.headers[c]);
                if (it != pair.headers.end()) {
                    const auto pc = static_cast<std::size_t>(it - pair.headers.begin());
                    const auto& a = pair.values[0][pc];
                    const auto& b = pair.values[1][pc];
                    if (a && b) {
                        const double g = 100.0 * (*a - *b);
                        cell = "(" + std::string(g >= 0.0 ? "+" : "") + fixed(g, 2) + ")";
                    }
                }
                out += " " + cell + " |";
            }
            out += "\n";
        }
    }
    return out;
}

inline std::string sweep_csv(std::span<const SweepRow> rows)
{
    std::string out = "alpha,clean,robust\n";
    for (const auto& r : rows) {
        out += fixed(r.alpha, 4) + "," + fixed(r.clean, 6) + "," + fixed(r.robust, 6) + "\n";
    }
    return out;
}

struct ScenarioBar {
    std::string name;
    double clean{0.0};
    double robust{0.0};
};

namespace detail {

inline constexpr double kPlotW = 480.0;
inline constexpr double kPlotH = 320.0;
inline constexpr double kMargin = 48.0;

inline std::string svg_open(const std::string& title)
{
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(kPlotW, 0) + "\" height=\"" +
           fixed(kPlotH, 0) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + "<text x=\"" + fixed(kPlotW / 2, 1) +
           "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" + title + "</text>\n";
}

inline double py(double acc) { return kPlotH - kMargin - acc * (kPlotH - 2 * kMargin); }

inline std::string y_axis()
{
    std::string s = "<line x1=\"" + fixed(kMargin, 1) + "\" y1=\"" + fixed(py(0), 1) + "\" x2=\"" +
                    fixed(kMargin, 1) + "\" y2=\"" + fixed(py(1), 1) + "\" stroke=\"black\"/>\n" +
                    "<line x1=\"" + fixed(kMargin, 1) + "\" y1=\"" + fixed(py(0), 1) + "\" x2=\"" +
                    fixed(kPlotW - kMargin, 1) + "\" y2=\"" + fixed(py(0), 1) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double a = i / 4.0;
        s += "<text x=\"" + fixed(kMargin - 6, 1) + "\" y=\"" + fixed(py(a) + 4, 1) + "\" text-anchor=\"end\">" +
             fixed(100 * a, 0) + "</text>\n";
    }
    return s;
}

}  // namespace detail

// Clean and robust accuracy against alpha (two polylines).
inline std::string svg_sweep(std::span<const SweepRow> rows)
{
    using namespace detail;
    std::string s = svg_open("Accuracy vs alpha") + y_axis();
    double lo = 0.0;
    double hi = 1.0;
    if (!rows.empty()) {
        lo = std::min_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.alpha < b.alpha; })->alpha;
        hi = std::max_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.alpha < b.alpha; })->alpha;
    }
    const double span = hi > lo ? hi - lo : 1.0;
    auto px = [&](double a) { return kMargin + (a - lo) / span * (kPlotW - 2 * kMargin); };
    const char* colors[] = {"#1f77b4", "#d62728"};
    const char* names[] = {"clean", "robust"};
    for (int k = 0; k < 2; ++k) {
        std::string pts;
        for (const auto& r : rows) {
            pts += fixed(px(r.alpha), 1) + "," + fixed(py(k == 0 ? r.clean : r.robust), 1) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[k]) + "\" stroke-width=\"2\" points=\"" + pts +
             "\"/>\n";
        s += "<text x=\"" + fixed(kPlotW - kMargin, 1) + "\" y=\"" + fixed(40.0 + 14 * k, 1) +
             "\" text-anchor=\"end\" fill=\"" + colors[k] + "\">" + names[k] + "</text>\n";
    }
    for (const auto& r : rows) {
        s += "<text x=\"" + fixed(px(r.alpha), 1) + "\" y=\"" + fixed(py(0) + 16, 1) + "\" text-anchor=\"middle\">" +
             fixed(r.alpha, 2) + "</text>\n";
    }
    return s + "</svg>\n";
}

// Grouped bars (clean, robust) per scenario.
inline std::string svg_scenarios(std::span<const ScenarioBar> bars)
{
    using namespace detail;
    std::string s = svg_open("Accuracy by scenario") + y_axis();
    const double slot = bars.empty() ? 0.0 : (kPlotW - 2 * kMargin) / static_cast<double>(bars.size());
    const double bw = slot / 3.0;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double x0 = kMargin + slot * static_cast<double>(i) + bw / 2;
        const double vals[] = {bars[i].clean, bars[i].robust};
        const char* colors[] = {"#1f77b4", "#d62728"};
        for (int k = 0; k < 2; ++k) {
            s += "<rect x=\"" + fixed(x0 + bw * k, 1) + "\" y=\"" + fixed(py(vals[k]), 1) + "\" width=\"" +
                 fixed(bw, 1) + "\" height=\"" + fixed(py(0) - py(vals[k]), 1) + "\" fill=\"" + colors[k] + "\"/>\n";
        }
        s += "<text x=\"" + fixed(x0 + bw, 1) + "\" y=\"" + fixed(py(0) + 16, 1) + "\" text-anchor=\"middle\">" +
             bars[i].name + "</text>\n";
    }
    return s + "</svg>\n";
}

inline std::string transfer_csv(const std::vector<std::string>& models, const nlohmann::json& matrix)
{
    std::string out = "target\\source";
    for (const auto& m : models) {
        out += "," + m;
    }
    out += "\n";
    for (std::size_t t = 0; t < models.size(); ++t) {
        out += models[t];
        for (std::size_t s = 0; s < models.size(); ++s) {
            out += "," + fixed(matrix.at(t).at(s).get<double>(), 6);
        }
        out += "\n";
    }
    return out;
}

// Every table and plot derivable from a run summary's "results" block, keyed by
// file name. Pure: identical input gives identical bytes.
//   results.reports    evaluation reports (table layout from results.layout)
//   results.baselines  {model: baseline model} for gain rows
//   results.sweep      [{alpha, clean, robust}]
//   results.scenarios  [{name, clean, robust}]
//   results.transfer   {models, matrix}
inline std::map<std::string, std::string> render_artifacts(const nlohmann::json& results,
                                                           const std::vector<std::string>& formats = {"all"})
{
    auto wanted = [&](const char* f) {
        return std::find(formats.begin(), formats.end(), "all") != formats.end() ||
               std::find(formats.begin(), formats.end(), f) != formats.end();
    };
    std::map<std::string, std::string> out;
    if (results.contains("reports") && !results.at("reports").empty()) {
        std::vector<EvalReport> reports;
        for (const auto& j : results.at("reports")) {
            reports.push_back(report_from_json(j));
        }
        check_compatible(reports);
        const auto layout = results.value("layout", std::string("attacks")) == "types" ? TableLayout::Types
                                                                                      : TableLayout::Attacks;
        std::vector<TableRow> rows;
        const nlohmann::json baselines = results.value("baselines", nlohmann::json::object());
        for (const auto& r : reports) {
            TableRow row{r, std::nullopt};
            if (baselines.contains(r.model)) {
                for (const auto& b : reports) {
                    if (b.model == baselines.at(r.model).get<std::string>()) {
                        row.baseline = b;
                    }
                }
            }
            rows.push_back(std::move(row));
        }
        if (wanted("csv")) {
            out["report.csv"] = emit_csv(reports);
        }
        if (wanted("json")) {
            out["report.json"] = emit_json(reports);
        }
        if (wanted("markdown")) {
            out["report.md"] = emit_markdown(rows, layout);
        }
    }
    if (results.contains("sweep")) {
        std::vector<SweepRow> rows;
        for (const auto& j : results.at("sweep")) {
            rows.push_back({j.at("alpha").get<double>(), j.at("clean").get<double>(), j.at("robust").get<double>()});
        }
        if (wanted("csv")) {
            out["sweep.csv"] = sweep_csv(rows);
        }
        if (wanted("plot")) {
            out["accuracy_vs_alpha.svg"] = svg_sweep(rows);
        }
    }
    if (results.contains("scenarios") && wanted("plot")) {
        std::vector<ScenarioBar> bars;
        for (const auto& j : results.at("scenarios")) {
            bars.push_back({j.at("name").get<std::string>(), j.at("clean").get<double>(), j.at("robust").get<double>()});
        }
        out["scenarios.svg"] = svg_scenarios(bars);
    }
    if (results.contains("transfer") && wanted("csv")) {
        const auto& t = results.at("transfer");
        out["transfer.csv"] = transfer_csv(t.at("models").get<std::vector<std::string>>(), t.at("matrix"));
    }
    return out;
}

}  // namespace mat

#endif  // MAT_REPORT_HPP
