#include "vdprobe/experiment/results.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "vdprobe/error.hpp"

namespace vdprobe::experiment {

namespace {

std::string shortest(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string percent(double change) {
    return (change >= 0 ? "+" : "") + fixed(100.0 * change, 1) + "%";
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

template <class T>
T parse_field(const std::string& text, const std::string& where) {
    T v{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw FormatError(where + ": bad number '" + text + "'");
    }
    return v;
}

void check_field(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(",\n\r") != std::string::npos) {
        throw ValidationError(std::string("result ") + what + " must be non-empty without commas or newlines: '" + s + "'");
    }
}

std::vector<std::string> read_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::mutex& csv_lock() {
    static std::mutex m;
    return m;
}

struct Aggregate {
    std::string metric;
    std::optional<metrics::Direction> direction;
    bool direction_missing = false;
    double sum = 0.0;
    int n = 0;
};

std::map<std::string, Aggregate> aggregate(const std::vector<ResultRow>& rows, const char* side) {
    std::map<std::string, Aggregate> out;
    for (const auto& r : rows) {
        auto [it, fresh] = out.try_emplace(r.task);
        auto& a = it->second;
        if (fresh) {
            a.metric = r.metric;
        } else if (a.metric != r.metric) {
            throw ValidationError(std::string(side) + " rows for task '" + r.task + "' mix metrics '" + a.metric +
                                  "' and '" + r.metric + "'");
        }
        if (!r.direction) {
            a.direction_missing = true;
        } else if (a.direction && *a.direction != *r.direction) {
            throw ValidationError(std::string(side) + " rows for task '" + r.task + "' disagree on direction");
        } else {
            a.direction = r.direction;
        }
        a.sum += r.value;
        ++a.n;
    }
    return out;
}

}  // namespace

std::string format_result_row(const ResultRow& r) {
    check_field(r.task, "task");
    check_field(r.mode, "mode");
    check_field(r.metric, "metric");
    if (!std::isfinite(r.value)) {
        throw NumericError("non-finite result value for task '" + r.task + "'");
    }
    std::string s = r.task + "," + r.mode + "," + std::to_string(r.ckpt_step) + "," + std::to_string(r.noise_t) + "," +
                    std::to_string(r.block) + "," + std::to_string(r.seed) + "," + r.metric + "," +
                    (r.direction ? metrics::direction_name(*r.direction) : "") + "," + shortest(r.value);
    return s;
}

std::vector<ResultRow> parse_results_csv(const std::string& text, const std::string& name) {
    const auto lines = read_lines(text);
    if (lines.empty()) {
        throw FormatError(name + ": empty results file");
    }
    const auto header = split_line(lines[0]);
    const auto expected = split_line(kResultsHeader);
    const std::set<std::string> known(expected.begin(), expected.end());
    for (const auto& col : header) {
        if (!known.contains(col)) {
            throw FormatError(name + ": unknown column '" + col + "'");
        }
    }
    if (header != expected) {
        throw FormatError(name + ": header must be '" + std::string(kResultsHeader) + "'");
    }
    std::vector<ResultRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = name + ":" + std::to_string(i + 1);
        const auto f = split_line(lines[i]);
        if (f.size() != expected.size()) {
            throw FormatError(where + ": expected " + std::to_string(expected.size()) + " fields");
        }
        ResultRow r;
        r.task = f[0];
        r.mode = f[1];
        r.ckpt_step = parse_field<std::int64_t>(f[2], where);
        r.noise_t = parse_field<int>(f[3], where);
        r.block = parse_field<int>(f[4], where);
        r.seed = parse_field<std::uint64_t>(f[5], where);
        r.metric = f[6];
        if (!f[7].empty()) {
            try {
                r.direction = metrics::parse_direction(f[7]);
            } catch (const ValidationError&) {
                throw FormatError(where + ": unknown direction '" + f[7] + "'");
            }
        }
        r.value = parse_field<double>(f[8], where);
        if (r.task.empty() || r.mode.empty() || r.metric.empty()) {
            throw FormatError(where + ": empty task, mode or metric");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ResultRow> read_results_csv(const std::string& path) { return parse_results_csv(slurp(path), path); }

void append_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::string text;
    for (const auto& r : rows) text += format_result_row(r) + "\n";
    std::lock_guard lock(csv_lock());
    bool fresh;
    {
        std::ifstream probe(path, std::ios::binary);
        fresh = !probe || probe.peek() == std::ifstream::traits_type::eof();
    }
    std::ofstream os(path, std::ios::binary | std::ios::app);
    if (fresh) os << kResultsHeader << "\n";
    os << text;
    if (!os) {
        throw IoError("cannot append to '" + path + "'");
    }
}

std::vector<ReportRow> build_report(const std::vector<ResultRow>& image, const std::vector<ResultRow>& video,
                                    const std::map<std::string, double>& quoted) {
    const auto a = aggregate(image, "image");
    const auto b = aggregate(video, "video");
    for (const auto& [task, _] : a) {
        if (!b.contains(task)) throw ValidationError("task '" + task + "' missing from the video results");
    }
    for (const auto& [task, _] : b) {
        if (!a.contains(task)) throw ValidationError("task '" + task + "' missing from the image results");
    }
    // Keep the image file's first-seen task order.
    std::vector<std::string> order;
    for (const auto& r : image) {
        if (std::find(order.begin(), order.end(), r.task) == order.end()) order.push_back(r.task);
    }
    std::vector<ReportRow> out;
    for (const auto& task : order) {
        const auto& ai = a.at(task);
        const auto& bi = b.at(task);
        if (ai.metric != bi.metric) {
            throw ValidationError("task '" + task + "' uses metric '" + ai.metric + "' for image and '" + bi.metric +
                                  "' for video");
        }
        ReportRow row;
        row.task = task;
        row.metric = ai.metric;
        row.image = ai.sum / ai.n;
        row.video = bi.sum / bi.n;
        if (ai.direction_missing || bi.direction_missing || !ai.direction || !bi.direction ||
            *ai.direction != *bi.direction) {
            row.flag = "missing_direction";
        } else {
            row.direction = ai.direction;
            row.change = metrics::relative_change(row.image, row.video, *row.direction);
            if (auto q = quoted.find(task); q != quoted.end()) {
                row.quoted = q->second;
                if (std::abs(*row.change - q->second) > kQuotedTolerance) row.flag = "quoted_discrepancy";
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string s = "task,metric,direction,image,video,relative_change,quoted_change,flag\n";
    for (const auto& r : rows) {
        s += r.task + "," + r.metric + "," + (r.direction ? metrics::direction_name(*r.direction) : "") + "," +
             shortest(r.image) + "," + shortest(r.video) + "," + (r.change ? fixed(*r.change, 6) : "") + "," +
             (r.quoted ? shortest(*r.quoted) : "") + "," + r.flag + "\n";
    }
    return s;
}

std::string report_svg(const std::vector<ReportRow>& rows) {
    const int row_h = 28, top = 40, label_w = 150, plot_w = 420, width = label_w + plot_w + 90;
    const int height = top + row_h * static_cast<int>(rows.size()) + 50;
    double span = 0.1;
    for (const auto& r : rows) {
        if (r.change) span = std::max(span, std::abs(*r.change));
    }
    const double zero = label_w + plot_w / 2.0;
    const double scale = (plot_w / 2.0) / span;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
       << "Relative change, video vs image backbone</text>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const int y = top + row_h * static_cast<int>(i);
        const std::string mark = r.flag.empty() ? "" : " *";
        os << "<text x=\"" << label_w - 8 << "\" y=\"" << y + 18 << "\" text-anchor=\"end\">" << r.task << mark
           << "</text>\n";
        if (!r.change) {
            os << "<text x=\"" << fixed(zero + 6, 1) << "\" y=\"" << y + 18 << "\" fill=\"gray\">n/a</text>\n";
            continue;
        }
        const double len = *r.change * scale;
        const double x = len >= 0 ? zero : zero + len;
        const char* fill = len >= 0 ? "#3a7bbf" : "#c0504d";
        os << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << y + 5 << "\" width=\"" << fixed(std::abs(len), 1)
           << "\" height=\"" << row_h - 10 << "\" fill=\"" << fill << "\"/>\n";
        const double tx = len >= 0 ? zero + len + 4 : zero + len - 4;
        os << "<text x=\"" << fixed(tx, 1) << "\" y=\"" << y + 18 << "\" text-anchor=\""
           << (len >= 0 ? "start" : "end") << "\">" << percent(*r.change) << "</text>\n";
    }
    const int axis_bottom = top + row_h * static_cast<int>(rows.size());
    os << "<line x1=\"" << fixed(zero, 1) << "\" y1=\"" << top << "\" x2=\"" << fixed(zero, 1) << "\" y2=\""
       << axis_bottom << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << label_w << "\" y=\"" << axis_bottom + 30
       << "\" fill=\"gray\">* flagged: see the report table</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::map<std::string, double> read_quoted_csv(const std::string& path) {
    const auto lines = read_lines(slurp(path));
    if (lines.empty() || lines[0] != "task,quoted_change") {
        throw FormatError(path + ": header must be 'task,quoted_change'");
    }
    std::map<std::string, double> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_line(lines[i]);
        const std::string where = path + ":" + std::to_string(i + 1);
        if (f.size() != 2 || f[0].empty()) {
            throw FormatError(where + ": expected task,quoted_change");
        }
        out[f[0]] = parse_field<double>(f[1], where);
    }
    return out;
}

std::vector<CorrelationRow> correlate_with_loss(const std::vector<ResultRow>& rows) {
    // (mode, step) -> loss mean; (task, mode) -> step -> value mean.
    std::map<std::pair<std::string, std::int64_t>, std::pair<double, int>> loss;
    std::map<std::pair<std::string, std::string>, std::map<std::int64_t, std::pair<double, int>>> values;
    for (const auto& r : rows) {
        if (r.task == kLossTask) {
            if (r.metric != kLossMetric) continue;
            auto& l = loss[{r.mode, r.ckpt_step}];
            l.first += r.value;
            ++l.second;
        } else {
            auto& v = values[{r.task, r.mode}][r.ckpt_step];
            v.first += r.value;
            ++v.second;
        }
    }
    std::vector<CorrelationRow> out;
    for (const auto& [key, by_step] : values) {
        std::vector<double> xs, ys;
        for (const auto& [step, v] : by_step) {
            auto l = loss.find({key.second, step});
            if (l == loss.end()) continue;
            xs.push_back(l->second.first / l->second.second);
            ys.push_back(v.first / v.second);
        }
        if (xs.size() < 2) continue;
        const bool flat_x = std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end();
        const bool flat_y = std::adjacent_find(ys.begin(), ys.end(), std::not_equal_to<>()) == ys.end();
        if (flat_x || flat_y) continue;
        out.push_back({key.first, key.second, static_cast<int>(xs.size()), metrics::pearson(xs, ys),
                       metrics::spearman(xs, ys)});
    }
    return out;
}

std::string correlation_csv(const std::vector<CorrelationRow>& rows) {
    std::string s = "task,mode,points,pearson,spearman\n";
    for (const auto& r : rows) {
        s += r.task + "," + r.mode + "," + std::to_string(r.points) + "," + fixed(r.pearson, 6) + "," +
             fixed(r.spearman, 6) + "\n";
    }
    return s;
}

}  // namespace vdprobe::experiment
