#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vdprobe/metrics/metrics.hpp"

namespace vdprobe::experiment {

inline constexpr const char* kResultsHeader = "task,mode,ckpt_step,noise_t,block,seed,metric,direction,value";

struct ResultRow {
    std::string task;
    std::string mode;
    std::int64_t ckpt_step = 0;
    int noise_t = 0;
    int block = 0;
    std::uint64_t seed = 0;
    std::string metric;
    // Empty in the file when the producer did not record one.
    std::optional<metrics::Direction> direction;
    double value = 0.0;
};

std::string format_result_row(const ResultRow& r);
// Header must be exactly kResultsHeader; unknown or missing columns are a FormatError.
std::vector<ResultRow> parse_results_csv(const std::string& text, const std::string& name);
std::vector<ResultRow> read_results_csv(const std::string& path);
// Creates the file with its header if absent, then appends. Serialized within
// the process so concurrent jobs never interleave lines.
void append_results_csv(const std::string& path, const std::vector<ResultRow>& rows);

// Relative change per task, video against image.
struct ReportRow {
    std::string task;
    std::string metric;
    std::optional<metrics::Direction> direction;
    double image = 0.0;
    double video = 0.0;
    std::optional<double> change;
    // "", "missing_direction" or "quoted_discrepancy".
    std::string flag;
    std::optional<double> quoted;
};

// A computed change more than this far from an externally quoted figure is
// flagged rather than silently replaced.
inline constexpr double kQuotedTolerance = 0.01;

// Rows are averaged over seeds per task. Both sets must cover the same tasks.
// `quoted` maps task to a quoted change for the discrepancy flag.
std::vector<ReportRow> build_report(const std::vector<ResultRow>& image, const std::vector<ResultRow>& video,
                                    const std::map<std::string, double>& quoted = {});
std::string report_csv(const std::vector<ReportRow>& rows);
// Bar chart of the changes; byte-stable for fixed input.
std::string report_svg(const std::vector<ReportRow>& rows);

// task,quoted_change lines.
std::map<std::string, double> read_quoted_csv(const std::string& path);

// Loss rows emitted by the checkpoint sweep.
inline constexpr const char* kLossTask = "pretrain";
inline constexpr const char* kLossMetric = "heldout_loss";

struct CorrelationRow {
    std::string task;
    std::string mode;
    int points = 0;
    double pearson = 0.0;
    double spearman = 0.0;
};

// Per (task, mode): downstream value against the loss at the same checkpoint,
// both averaged over seeds. Pairs with fewer than two checkpoints or a
// constant series are skipped.
std::vector<CorrelationRow> correlate_with_loss(const std::vector<ResultRow>& rows);
std::string correlation_csv(const std::vector<CorrelationRow>& rows);

}  // namespace vdprobe::experiment
