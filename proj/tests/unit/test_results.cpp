#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "doctest.h"
#include "vdprobe/error.hpp"
#include "vdprobe/experiment/results.hpp"

using namespace vdprobe;
using namespace vdprobe::experiment;
using metrics::Direction;
namespace fs = std::filesystem;

namespace {

const std::string kData = VDPROBE_TEST_DATA;

ResultRow row(std::string task, std::string mode, double value, std::optional<Direction> d = Direction::higher_better,
              std::uint64_t seed = 0, std::int64_t step = 0) {
    ResultRow r;
    r.task = std::move(task);
    r.mode = std::move(mode);
    r.metric = "top1";
    r.direction = d;
    r.value = value;
    r.seed = seed;
    r.ckpt_step = step;
    return r;
}

const ReportRow& find(const std::vector<ReportRow>& rows, const std::string& task) {
    for (const auto& r : rows)
        if (r.task == task) return r;
    FAIL("no row for " << task);
    return rows.front();
}

}  // namespace

TEST_CASE("result rows round trip through csv") {
    ResultRow r = row("point", "video", 0.1 + 0.2);
    r.ckpt_step = 1200;
    r.noise_t = 800;
    r.block = 8;
    r.seed = 4;
    r.metric = "average_jaccard";
    ResultRow bare = row("depth", "image", 1e-17, std::nullopt);
    const std::string text = std::string(kResultsHeader) + "\n" + format_result_row(r) + "\n" + format_result_row(bare);
    auto back = parse_results_csv(text, "mem");
    REQUIRE(back.size() == 2);
    CHECK(back[0].value == r.value);
    CHECK(back[0].ckpt_step == 1200);
    CHECK(back[0].noise_t == 800);
    CHECK(back[0].block == 8);
    CHECK(back[0].seed == 4);
    CHECK(back[0].metric == "average_jaccard");
    CHECK(back[0].direction == Direction::higher_better);
    CHECK_FALSE(back[1].direction.has_value());
    CHECK(back[1].value == 1e-17);
}

TEST_CASE("results csv refuses unknown and missing columns") {
    const std::string body = "\npoint,video,0,0,0,0,top1,higher_better,0.5\n";
    try {
        parse_results_csv("task,mode,ckpt_step,noise_t,block,seed,metric,direction,value,fvd" + body, "x.csv");
        FAIL("extra column accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("fvd") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_results_csv("task,mode,ckpt_step,noise_t,block,seed,metric,value" + body, "x"), FormatError);
    CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\npoint,video,0,0,0,0,top1,up,0.5", "x"),
                    FormatError);
    CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\npoint,video,0,0,0", "x"), FormatError);
    CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\npoint,video,a,0,0,0,top1,,0.5", "x"),
                    FormatError);
    CHECK_THROWS_AS(parse_results_csv("", "x"), FormatError);
    CHECK_THROWS_AS(format_result_row(row("a,b", "video", 1.0)), ValidationError);
}

TEST_CASE("concurrent appends keep whole lines") {
    const auto path = (fs::temp_directory_path() / "vdprobe_results_append.csv").string();
    fs::remove(path);
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&, w] {
            for (int i = 0; i < 50; ++i) append_results_csv(path, {row("cls", "video", w + i / 100.0, {}, w)});
        });
    }
    for (auto& t : workers) t.join();
    auto rows = read_results_csv(path);
    CHECK(rows.size() == 200);
    fs::remove(path);
}

TEST_CASE("report on the published tables") {
    auto image = read_results_csv(kData + "/table_image.csv");
    auto video = read_results_csv(kData + "/table_video.csv");
    auto quoted = read_quoted_csv(kData + "/quoted_changes.csv");
    auto rep = build_report(image, video, quoted);
    CHECK(rep.size() == 10);
    const std::pair<const char*, double> expected[] = {{"SSv2", 0.417},   {"PointTracks", 0.684}, {"CamPose", 0.606},
                                                       {"ImageNet", 0.018}, {"iNat", 0.115},      {"Places", 0.0065}};
    for (const auto& [task, change] : expected) {
        INFO(task);
        const auto& r = find(rep, task);
        REQUIRE(r.change.has_value());
        CHECK(std::abs(*r.change - change) <= 0.001);
        CHECK(r.flag.empty());
    }
    for (const char* task : {"K400", "K700", "ObjTracks"}) {
        INFO(task);
        CHECK(find(rep, task).flag == "quoted_discrepancy");
    }
    CHECK(find(rep, "K400").change.value() == doctest::Approx(0.0474).epsilon(1e-3));
    CHECK(find(rep, "K700").change.value() == doctest::Approx(0.0455).epsilon(1e-3));
    CHECK(find(rep, "ObjTracks").change.value() == doctest::Approx(0.2767).epsilon(1e-3));
    CHECK(find(rep, "Depth").flag.empty());
    CHECK(rep.front().task == "Places");

    const auto csv = report_csv(rep);
    CHECK(csv.find("K400,top1,higher_better,0.527,0.552,") != std::string::npos);
    const auto svg = report_svg(rep);
    CHECK(svg == report_svg(build_report(image, video, quoted)));
    CHECK(svg.find("+41.7%") != std::string::npos);
    CHECK(svg.find("+68.4%") != std::string::npos);
    CHECK(svg.find("+60.6%") != std::string::npos);
    CHECK(svg.find("K400 *") != std::string::npos);
}

TEST_CASE("equal values give a zero bar") {
    auto rep = build_report({row("cls", "image", 0.5)}, {row("cls", "video", 0.5)});
    CHECK(*rep[0].change == 0.0);
    CHECK(report_svg(rep).find("+0.0%") != std::string::npos);
}

TEST_CASE("report averages seeds and flags missing directions") {
    auto rep = build_report({row("cls", "image", 0.4, Direction::higher_better, 0), row("cls", "image", 0.6, Direction::higher_better, 1),
                             row("depth", "image", 0.3, std::nullopt)},
                            {row("cls", "video", 0.75), row("depth", "video", 0.2, Direction::lower_better)});
    CHECK(rep[0].image == doctest::Approx(0.5));
    CHECK(*rep[0].change == doctest::Approx(0.5));
    CHECK(rep[1].flag == "missing_direction");
    CHECK_FALSE(rep[1].change.has_value());
    CHECK(report_svg(rep).find("n/a") != std::string::npos);
}

TEST_CASE("report rejects task mismatches") {
    CHECK_THROWS_AS(build_report({row("cls", "image", 0.5)}, {row("box", "video", 0.5)}), ValidationError);
    CHECK_THROWS_AS(build_report({row("cls", "image", 0.5), row("box", "image", 0.5)}, {row("cls", "video", 0.5)}),
                    ValidationError);
    auto other = row("cls", "video", 0.5);
    other.metric = "epe";
    CHECK_THROWS_AS(build_report({row("cls", "image", 0.5)}, {other}), ValidationError);
}

TEST_CASE("loss correlation sub-report") {
    std::vector<ResultRow> rows;
    const double losses[] = {0.9, 0.5, 0.3, 0.2};
    const double aj[] = {0.30, 0.35, 0.41, 0.40};
    for (int i = 0; i < 4; ++i) {
        for (std::uint64_t seed : {0u, 1u}) {
            ResultRow l = row(kLossTask, "video", losses[i], Direction::lower_better, seed, 100 * (i + 1));
            l.metric = kLossMetric;
            rows.push_back(l);
            rows.push_back(row("point", "video", aj[i] + (seed ? 0.01 : -0.01), Direction::higher_better, seed, 100 * (i + 1)));
        }
    }
    auto c = correlate_with_loss(rows);
    REQUIRE(c.size() == 1);
    CHECK(c[0].task == "point");
    CHECK(c[0].points == 4);
    const std::vector<double> xs(std::begin(losses), std::end(losses)), ys(std::begin(aj), std::end(aj));
    CHECK(c[0].pearson == doctest::Approx(metrics::pearson(xs, ys)).epsilon(1e-12));
    CHECK(c[0].spearman == doctest::Approx(-0.8));
    CHECK(correlation_csv(c).rfind("task,mode,points,pearson,spearman\n", 0) == 0);
}
