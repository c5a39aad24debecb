// bdrseg: phantom generation, training, segmentation and evaluation.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <bdrseg/contour.hpp>
#include <bdrseg/distmap.hpp>
#include <bdrseg/imgio.hpp>
#include <bdrseg/metrics.hpp>
#include <bdrseg/phantom.hpp>
#include <bdrseg/train.hpp>

namespace fs = std::filesystem;
using namespace bdrseg;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::Usage:
    case ErrorKind::InvalidParams: return kUsage;
    case ErrorKind::DivergedTraining:
    case ErrorKind::MissingGradient: return kNumeric;
    default: return kData;
    }
}

void setup_logging()
{
    auto logger = spdlog::stderr_logger_st("bdrseg");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("BDRSEG_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps anything unknown to "off"
        if (level == spdlog::level::off && std::string(env) != "off")
            spdlog::warn("BDRSEG_LOG={} not recognized, keeping info", env);
        else
            spdlog::set_level(level);
    }
}

void log_config(const char* command, const json& j) { spdlog::info("{} config {}", command, j.dump()); }

std::string id_of(const fs::path& p) { return p.stem().string(); }

// --- gen ------------------------------------------------------------------

struct GenArgs {
    fs::path out;
    std::size_t n_train = 200, n_test = 50;
    int size = 64;
    std::uint64_t seed = 1;
    PhantomRanges ranges;
};

void cmd_gen(const GenArgs& a, int threads)
{
    auto r = a.ranges;
    r.height = r.width = a.size;
    json j;
    j["out"] = a.out.string();
    j["n_train"] = a.n_train;
    j["n_test"] = a.n_test;
    j["size"] = a.size;
    j["seed"] = a.seed;
    j["threads"] = threads;
    j["ranges"] = {{"major", {r.major_min, r.major_max}}, {"ratio", {r.ratio_min, r.ratio_max}},
                   {"notch", {r.notch_min, r.notch_max}}, {"blur", {r.blur_min, r.blur_max}},
                   {"speckle", {r.speckle_min, r.speckle_max}}, {"gain_max", r.gain_max},
                   {"margin", r.margin}};
    log_config("gen", j);
    make_dataset(a.out, a.n_train, a.n_test, a.seed, r, static_cast<unsigned>(threads));
    spdlog::info("wrote {} samples to {}", a.n_train + a.n_test, a.out.string());
}

// --- distmap --------------------------------------------------------------

void cmd_distmap(const fs::path& mask, const fs::path& out)
{
    log_config("distmap", {{"mask", mask.string()}, {"out", out.string()}});
    io::write_fmap(out, mask_to_distance_map(io::read_pgm_mask(mask)));
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
    fs::path config, data, out, log;
};

void cmd_train(const TrainArgs& a, std::optional<int> threads)
{
    auto config = read_train_config(a.config);
    if (threads)
        config.threads = *threads;
    validate(config);
    const fs::path log_path = a.log.empty() ? fs::path(a.out.string() + ".log.jsonl") : a.log;
    json j;
    j["config"] = to_json(config);
    j["data"] = a.data.string();
    j["out"] = a.out.string();
    j["log"] = log_path.string();
    log_config("train", j);

    const bool needs_dmaps = config.lambda_start > 0.0 || config.lambda_end > 0.0;
    const auto data = load_training_data(read_manifest(a.data), needs_dmaps);
    spdlog::info("{} train / {} test samples", data.train.size(), data.test.size());

    std::string log_text;
    const auto start = std::chrono::steady_clock::now();
    auto result = train<float>(config, data, {[&](const EpochRecord& e) {
                                   const auto line = format_epoch_record(e);
                                   log_text += line + "\n";
                                   spdlog::info("{}", line);
                               }});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_model(a.out, result.model, config);
    io::detail::write_file(log_path, std::vector<std::uint8_t>(log_text.begin(), log_text.end()));
    spdlog::info("trained in {:.1f} s, checkpoint {}", secs, a.out.string());
}

// --- segment --------------------------------------------------------------

struct SegmentArgs {
    fs::path ckpt, image, dmap, out, data, out_dir, overlay;
    std::string mode = "classifier";
    std::string split = "test";
    bool overlays = false;
    BrnOptions brn;
};

/// Side-by-side panels: the image, the image with the predicted boundary in
/// white, and the image with the reference boundary in black (or the
/// predicted mask when there is no reference).
Image triptych(const Image& image, const BinaryMask& pred, const BinaryMask* truth)
{
    const int h = image.height(), w = image.width();
    Image out(h, 3 * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            out(y, x) = out(y, w + x) = image(y, x);
            out(y, 2 * w + x) = truth ? image(y, x) : static_cast<float>(pred(y, x));
        }
    if (count_foreground(pred) > 0)
        for (auto p : boundary_pixels(pred))
            out(p.y, w + p.x) = 1.0f;
    if (truth && count_foreground(*truth) > 0)
        for (auto p : boundary_pixels(*truth))
            out(p.y, 2 * w + p.x) = 0.0f;
    return out;
}

class Segmenter {
public:
    explicit Segmenter(const SegmentArgs& a) : args_(a)
    {
        if (!a.ckpt.empty()) {
            const auto config = read_train_config(config_sidecar(a.ckpt));
            model_.emplace(load_model<float>(a.ckpt, config.pipeline));
        }
    }

    BinaryMask run(const Image& image, double& seconds)
    {
        const auto start = std::chrono::steady_clock::now();
        BinaryMask mask;
        if (args_.mode == "brn")
            mask = brn_segment(predict_dmap(*model_, image).clamped, args_.brn);
        else
            mask = segment(*model_, image);
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return mask;
    }

private:
    const SegmentArgs& args_;
    std::optional<Pipeline<float>> model_;
};

json segment_config(const SegmentArgs& a)
{
    json j;
    j["mode"] = a.mode;
    j["ckpt"] = a.ckpt.string();
    j["image"] = a.image.string();
    j["dmap"] = a.dmap.string();
    j["out"] = a.out.string();
    j["data"] = a.data.string();
    j["out_dir"] = a.out_dir.string();
    j["split"] = a.split;
    j["overlay"] = a.overlay.string();
    j["overlays"] = a.overlays;
    j["tau"] = a.brn.tau;
    j["link_radius"] = a.brn.link_radius;
    return j;
}

void cmd_segment(const SegmentArgs& a)
{
    const int sources = !a.image.empty() + !a.dmap.empty() + !a.data.empty();
    if (sources != 1)
        fail(ErrorKind::Usage, "give exactly one of --image, --dmap or --data");
    if (!a.dmap.empty() && a.mode != "brn")
        fail(ErrorKind::Usage, "--dmap requires --mode brn");
    if (a.dmap.empty() && a.ckpt.empty())
        fail(ErrorKind::Usage, "--ckpt is required unless segmenting a --dmap");
    if (!a.data.empty() ? a.out_dir.empty() : a.out.empty())
        fail(ErrorKind::Usage, !a.data.empty() ? "--data requires --out-dir" : "--out is required");
    log_config("segment", segment_config(a));

    if (!a.dmap.empty()) {
        const auto start = std::chrono::steady_clock::now();
        const auto mask = brn_segment(io::read_fmap(a.dmap), a.brn);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        io::write_pgm(a.out, mask);
        std::printf("latency_ms\t%s\t%.3f\n", id_of(a.dmap).c_str(), 1e3 * s);
        return;
    }

    Segmenter seg(a);
    if (!a.image.empty()) {
        const auto image = io::read_pgm_image(a.image);
        double s = 0.0;
        const auto mask = seg.run(image, s);
        io::write_pgm(a.out, mask);
        if (!a.overlay.empty())
            io::write_pgm(a.overlay, triptych(image, mask, nullptr));
        std::printf("latency_ms\t%s\t%.3f\n", id_of(a.image).c_str(), 1e3 * s);
        return;
    }

    const auto manifest = read_manifest(a.data);
    std::vector<ManifestRecord> records;
    for (const auto& r : manifest.records)
        if (a.split == "all" || r.split == a.split)
            records.push_back(r);
    if (records.empty())
        fail(ErrorKind::ManifestMismatch, "no records in split '" + a.split + "'");
    for (const char* sub : {"masks", "overlays"}) {
        if (std::string(sub) == "overlays" && !a.overlays)
            continue;
        std::error_code ec;
        fs::create_directories(a.out_dir / sub, ec);
        if (ec)
            fail(ErrorKind::IoFailure, "cannot create " + (a.out_dir / sub).string());
    }

    std::vector<ManifestRecord> written;
    double total = 0.0;
    std::size_t failures = 0;
    for (const auto& r : records) {
        const auto image = io::read_pgm_image(manifest.resolve(r.image_path));
        BinaryMask mask;
        double s = 0.0;
        try {
            mask = seg.run(image, s);
        } catch (const Error& e) {
            // a failed contour leaves an empty prediction, scored as a miss
            if (a.mode != "brn" || e.kind() == ErrorKind::ShapeMismatch)
                throw;
            spdlog::warn("{}: {}", r.id, e.what());
            mask = BinaryMask(image.height(), image.width(), 0);
            ++failures;
        }
        total += s;
        ManifestRecord out{r.id, "", "masks/" + r.id + ".pgm", "", r.split};
        io::write_pgm(a.out_dir / out.mask_path, mask);
        if (a.overlays) {
            std::optional<BinaryMask> truth;
            if (!r.mask_path.empty())
                truth = io::read_pgm_mask(manifest.resolve(r.mask_path));
            io::write_pgm(a.out_dir / "overlays" / (r.id + ".pgm"), triptych(image, mask, truth ? &*truth : nullptr));
        }
        std::printf("latency_ms\t%s\t%.3f\n", r.id.c_str(), 1e3 * s);
        written.push_back(out);
    }
    write_manifest(a.out_dir, written);
    std::printf("latency_ms\tmean\t%.3f\n", 1e3 * total / static_cast<double>(records.size()));
    if (failures)
        spdlog::warn("{} of {} contours failed", failures, records.size());
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
    fs::path pred, gt, compare, report;
    std::string name = "pred", compare_name = "compare";
};

void cmd_eval(const EvalArgs& a)
{
    log_config("eval", {{"pred", a.pred.string()},
                        {"gt", a.gt.string()},
                        {"compare", a.compare.string()},
                        {"report", a.report.string()},
                        {"name", a.name},
                        {"compare_name", a.compare_name}});
    const auto gt = read_manifest(a.gt);
    EvalReport report;
    report.methods.push_back(evaluate(read_manifest(a.pred), gt, a.name));
    if (!a.compare.empty()) {
        report.methods.push_back(evaluate(read_manifest(a.compare), gt, a.compare_name));
        report.p_values = paired_p_values(report.methods[0], report.methods[1]);
    }
    write_report(a.report, report);
    std::fputs(format_summary(report).c_str(), stdout);
}

} // namespace

int main(int argc, char** argv)
{
    setup_logging();
    CLI::App app{"Boundary-regression segmentation of synthetic ultrasound phantoms"};
    app.require_subcommand(1);
    int threads = 1;
    auto* threads_opt =
        app.add_option("--threads", threads, "Worker threads (default 1, byte-identical results for any value)")
            ->check(CLI::Range(1, 256));

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Write a phantom dataset (images, masks, distance maps, manifest)");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--n-train", gen.n_train, "Training samples")->capture_default_str();
    g->add_option("--n-test", gen.n_test, "Test samples")->capture_default_str();
    g->add_option("--size", gen.size, "Frame side in pixels")->capture_default_str()->check(CLI::Range(16, 4096));
    g->add_option("--seed", gen.seed, "Dataset seed; sample i uses seed + i")->capture_default_str();
    auto& r = gen.ranges;
    g->add_option("--major-min", r.major_min, "Smallest semi-major axis, fraction of the side")->capture_default_str();
    g->add_option("--major-max", r.major_max, "Largest semi-major axis, fraction of the side")->capture_default_str();
    g->add_option("--ratio-min", r.ratio_min, "Smallest minor/major axis ratio")->capture_default_str();
    g->add_option("--ratio-max", r.ratio_max, "Largest minor/major axis ratio")->capture_default_str();
    g->add_option("--notch-min", r.notch_min, "Smallest hilum notch depth")->capture_default_str();
    g->add_option("--notch-max", r.notch_max, "Largest hilum notch depth")->capture_default_str();
    g->add_option("--blur-min", r.blur_min, "Smallest blur sigma")->capture_default_str();
    g->add_option("--blur-max", r.blur_max, "Largest blur sigma")->capture_default_str();
    g->add_option("--speckle-min", r.speckle_min, "Smallest speckle strength")->capture_default_str();
    g->add_option("--speckle-max", r.speckle_max, "Largest speckle strength")->capture_default_str();
    g->add_option("--gain-max", r.gain_max, "Largest depth-gain slope")->capture_default_str();
    g->add_option("--margin", r.margin, "Gap between outline and frame edge, pixels")->capture_default_str();

    fs::path dm_mask, dm_out;
    auto* d = app.add_subcommand("distmap", "Boundary distance map of a mask");
    d->add_option("--mask", dm_mask, "Input mask (PGM)")->required();
    d->add_option("--out", dm_out, "Output map (FMAP)")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a pipeline; writes CKPT, CKPT.config.json and a JSONL epoch log");
    t->add_option("--config", tr.config, "Training config (JSON)")->required();
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--log", tr.log, "Epoch log path (default CKPT.log.jsonl)");

    SegmentArgs sg;
    auto* s = app.add_subcommand("segment", "Segment one image, one distance map, or a dataset split");
    s->add_option("--ckpt", sg.ckpt, "Checkpoint (its .config.json sidecar supplies the architecture)");
    s->add_option("--image", sg.image, "Input image (PGM)");
    s->add_option("--dmap", sg.dmap, "Distance map (FMAP) to post-process directly; brn mode only");
    s->add_option("--out", sg.out, "Output mask (PGM) for --image or --dmap");
    s->add_option("--data", sg.data, "Dataset directory for batch mode");
    s->add_option("--out-dir", sg.out_dir, "Batch output directory (masks/, manifest.jsonl)");
    s->add_option("--split", sg.split, "Batch split: train, test or all")
        ->capture_default_str()
        ->check(CLI::IsMember({"train", "test", "all"}));
    s->add_option("--mode", sg.mode, "classifier or brn")
        ->capture_default_str()
        ->check(CLI::IsMember({"classifier", "brn"}));
    s->add_option("--tau", sg.brn.tau, "brn: distance-map threshold in (0, 1)")->capture_default_str();
    s->add_option("--link-radius", sg.brn.link_radius, "brn: graph edge radius in pixels")->capture_default_str();
    s->add_option("--overlay", sg.overlay, "Single-image mode: write a PGM triptych here");
    s->add_flag("--overlays", sg.overlays, "Batch mode: write PGM triptychs to overlays/");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score predicted masks; --compare adds paired Wilcoxon p-values");
    e->add_option("--pred", ev.pred, "Prediction directory (manifest with mask paths)")->required();
    e->add_option("--gt", ev.gt, "Ground-truth dataset directory")->required();
    e->add_option("--compare", ev.compare, "Second prediction directory");
    e->add_option("--report", ev.report, "Report path")->required();
    e->add_option("--name", ev.name, "Method name for --pred")->capture_default_str();
    e->add_option("--compare-name", ev.compare_name, "Method name for --compare")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*g)
            cmd_gen(gen, threads);
        else if (*d)
            cmd_distmap(dm_mask, dm_out);
        else if (*t)
            cmd_train(tr, threads_opt->count() ? std::optional<int>(threads) : std::nullopt);
        else if (*s)
            cmd_segment(sg);
        else if (*e)
            cmd_eval(ev);
    } catch (const Error& err) {
        spdlog::error("{}", err.what());
        return exit_code(err.kind());
    } catch (const std::exception& err) {
        spdlog::error("{}", err.what());
        return kData;
    }
    return kOk;
}
