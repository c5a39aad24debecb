#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "distmap.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "imgio.hpp"
#include "manifest.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "nn/checkpoint.hpp"
#include "nn/sgd.hpp"
#include "phantom.hpp"

namespace bdrseg {

/// Random smooth deformation applied to a training sample with probability `prob`.
struct AugmentConfig {
    double prob = 0.0;
    double amplitude = 2.0;
    double sigma = 6.0;

    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct TrainConfig {
    PipelineConfig pipeline;
    double lambda_start = 0.9;
    double lambda_end = 0.1;
    double lr = 0.01;
    /// When set, the learning rate moves linearly from `lr` to this value over the epochs.
    std::optional<double> lr_end;
    double momentum = 0.9;
    /// Rescale the batch gradient to this global L2 norm when it is larger; 0 disables.
    double clip_norm = 0.0;
    int batch_size = 8;
    int epochs = 40;
    std::uint64_t seed = 1;
    int threads = 1;
    AugmentConfig augment;

    LossSchedule schedule() const { return {lambda_start, lambda_end, epochs}; }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& c)
{
    validate(c.pipeline);
    validate(c.schedule());
    auto bad = [](const std::string& what) { fail(ErrorKind::InvalidParams, "train config: " + what); };
    if (!(c.lr >= 0.0) || !std::isfinite(c.lr))
        bad("lr must be finite and >= 0");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0))
        bad("momentum must lie in [0, 1)");
    if (c.lr_end && (!(*c.lr_end >= 0.0) || !std::isfinite(*c.lr_end)))
        bad("lr_end must be finite and >= 0");
    if (!(c.clip_norm >= 0.0) || !std::isfinite(c.clip_norm))
        bad("clip_norm must be finite and >= 0");
    if (c.batch_size < 1)
        bad("batch_size must be >= 1");
    if (c.threads < 1)
        bad("threads must be >= 1");
    if (!(c.augment.prob >= 0.0 && c.augment.prob <= 1.0))
        bad("augment.prob must lie in [0, 1]");
    if (c.augment.prob > 0.0) {
        if (c.augment.sigma < kMinFieldSigma)
            bad("augment.sigma must be >= 4");
        if (c.augment.amplitude < 0.0 || c.augment.amplitude > kDefaultDisplacementCap)
            bad("augment.amplitude must lie in [0, 8]");
    }
}

inline nlohmann::ordered_json to_json(const TrainConfig& c)
{
    nlohmann::ordered_json j;
    j["pipeline"] = to_json(c.pipeline);
    j["lambda_start"] = c.lambda_start;
    j["lambda_end"] = c.lambda_end;
    j["lr"] = c.lr;
    j["lr_end"] = c.lr_end ? nlohmann::ordered_json(*c.lr_end) : nlohmann::ordered_json(nullptr);
    j["momentum"] = c.momentum;
    j["clip_norm"] = c.clip_norm;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["augment"] = {{"prob", c.augment.prob}, {"amplitude", c.augment.amplitude}, {"sigma", c.augment.sigma}};
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
    using detail::read_key;
    const std::string where = "train config";
    detail::reject_unknown(j,
                           {"pipeline", "lambda_start", "lambda_end", "lr", "lr_end", "momentum", "clip_norm", "batch_size", "epochs", "seed",
                            "threads", "augment"},
                           where);
    TrainConfig c;
    if (j.contains("pipeline"))
        c.pipeline = pipeline_from_json(j.at("pipeline"), where + ".pipeline");
    read_key(j, "lambda_start", c.lambda_start, where);
    read_key(j, "lambda_end", c.lambda_end, where);
    read_key(j, "lr", c.lr, where);
    if (j.contains("lr_end") && !j.at("lr_end").is_null()) {
        double v = 0.0;
        read_key(j, "lr_end", v, where);
        c.lr_end = v;
    }
    read_key(j, "momentum", c.momentum, where);
    read_key(j, "clip_norm", c.clip_norm, where);
    read_key(j, "batch_size", c.batch_size, where);
    read_key(j, "epochs", c.epochs, where);
    read_key(j, "seed", c.seed, where);
    read_key(j, "threads", c.threads, where);
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        detail::reject_unknown(a, {"prob", "amplitude", "sigma"}, where + ".augment");
        read_key(a, "prob", c.augment.prob, where + ".augment");
        read_key(a, "amplitude", c.augment.amplitude, where + ".augment");
        read_key(a, "sigma", c.augment.sigma, where + ".augment");
    }
    validate(c);
    return c;
}

inline TrainConfig read_train_config(const std::filesystem::path& path)
{
    const auto bytes = io::detail::read_file(path);
    try {
        return train_config_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::InvalidParams, path.string() + ": " + e.what());
    }
}

// --- data -----------------------------------------------------------------

struct TrainSample {
    std::string id;
    Image image;
    BinaryMask mask;
    std::optional<DistanceMap> dmap;
};

struct TrainingData {
    std::vector<TrainSample> train;
    std::vector<TrainSample> test;
};

/// Loads the train and test splits. Distance maps are read only when
/// `with_dmaps` is set; `dmap_reads` counts every map actually read.
inline TrainingData load_training_data(const Manifest& manifest, bool with_dmaps, std::size_t* dmap_reads = nullptr)
{
    TrainingData data;
    for (const auto& r : manifest.records) {
        if (r.split != "train" && r.split != "test")
            continue;
        TrainSample s;
        s.id = r.id;
        s.image = io::read_pgm_image(manifest.resolve(r.image_path));
        s.mask = io::read_pgm_mask(manifest.resolve(r.mask_path));
        require_same_shape(s.image, s.mask, "training sample mask");
        const auto fg = count_foreground(s.mask);
        if (fg == 0 || fg == s.mask.size())
            fail(ErrorKind::EmptyMask, "sample '" + r.id + "' has a degenerate mask");
        if (with_dmaps && r.split == "train") {
            if (r.dmap_path.empty())
                fail(ErrorKind::IoFailure, "sample '" + r.id + "' has no distance map");
            s.dmap = io::read_fmap(manifest.resolve(r.dmap_path));
            require_same_shape(s.image, *s.dmap, "training sample distance map");
            if (dmap_reads)
                ++*dmap_reads;
        }
        (r.split == "train" ? data.train : data.test).push_back(std::move(s));
    }
    return data;
}

// --- training loop --------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double lambda = 0.0;
    std::optional<double> l2; ///< absent when the regression term was off all epoch
    double ce = 0.0;
    double val_dice = 0.0;
};

inline std::string format_epoch_record(const EpochRecord& r)
{
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lambda"] = r.lambda;
    j["l2"] = r.l2 ? nlohmann::ordered_json(*r.l2) : nlohmann::ordered_json(nullptr);
    j["ce"] = r.ce;
    j["val_dice"] = r.val_dice;
    return j.dump();
}

struct TrainCounters {
    std::size_t l2_evaluations = 0;
    std::size_t samples_seen = 0;
};

struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
};

template <typename Real = float>
struct TrainResult {
    Pipeline<Real> model;
    std::vector<EpochRecord> log;
    TrainCounters counters;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5Bull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

template <typename Real>
void copy_weights(Pipeline<Real>& from, Pipeline<Real>& to)
{
    auto src = from.parameters();
    auto dst = to.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].tensor->data().begin(), src[i].tensor->data().end(), dst[i].tensor->data().begin());
}

/// Runs `job(worker, index)` for index in [0, count) on `threads` workers.
/// Callers write results to per-index slots, so the outcome does not
/// depend on which worker ran an index.
inline void parallel_for(int threads, std::size_t count, const std::function<void(int, std::size_t)>& job)
{
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            job(0, i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), count));
    for (int t = 0; t < n; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next++; i < count; i = next++)
                    job(t, i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        });
    for (auto& th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace detail

namespace detail {

/// Mean classifier Dice over `samples`, one worker per replica.
template <typename Real>
double mean_dice(std::vector<Pipeline<Real>>& replicas, std::span<const TrainSample> samples)
{
    if (samples.empty())
        return 0.0;
    std::vector<double> scores(samples.size());
    parallel_for(static_cast<int>(replicas.size()), samples.size(), [&](int worker, std::size_t i) {
        auto& m = replicas[static_cast<std::size_t>(worker)];
        scores[i] = dice(segment(m, samples[i].image), samples[i].mask);
    });
    double s = 0.0;
    for (double v : scores)
        s += v;
    return s / static_cast<double>(samples.size());
}

} // namespace detail

template <typename Real>
double mean_dice(const Pipeline<Real>& model, std::span<const TrainSample> samples, int threads = 1)
{
    std::vector<Pipeline<Real>> replicas(static_cast<std::size_t>(std::max(threads, 1)), model);
    return detail::mean_dice(replicas, samples);
}

/// Seeded minibatch SGD on the combined loss with the epoch-wise lambda.
/// Each sample's gradient is computed independently and the batch gradient
/// is reduced in sample order, so results do not depend on `threads`.
template <typename Real = float>
TrainResult<Real> train(const TrainConfig& config, const TrainingData& data, const TrainHooks& hooks = {})
{
    validate(config);
    if (data.train.empty())
        fail(ErrorKind::InvalidParams, "train: no training samples");
    const auto schedule = config.schedule();
    const int h = config.pipeline.input_h, w = config.pipeline.input_w;
    for (const auto& s : data.train)
        if (s.image.height() != h || s.image.width() != w)
            fail(ErrorKind::ShapeMismatch, "train: sample '" + s.id + "' does not match the configured input size");

    TrainResult<Real> result{Pipeline<Real>(config.pipeline, config.seed), {}, {}};
    auto& master = result.model;
    const int threads = config.threads;
    std::vector<Pipeline<Real>> workers(static_cast<std::size_t>(threads), master);

    auto master_params = master.parameters();
    std::vector<nn::Tensor4<Real>*> tensors;
    std::size_t total = 0;
    std::vector<std::size_t> offsets;
    for (auto& p : master_params) {
        tensors.push_back(p.tensor);
        offsets.push_back(total);
        total += p.tensor->size();
        p.tensor->grad();
    }
    nn::Sgd<Real> sgd(config.lr, config.momentum);
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    std::vector<std::vector<Real>> slots(batch, std::vector<Real>(total));
    struct SampleLoss {
        std::optional<double> l2;
        double ce = 0.0;
    };
    std::vector<SampleLoss> losses(batch);

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lambda = schedule.at(epoch);
        const bool classifier_active = lambda < 1.0;
        if (config.lr_end) {
            const double t = config.epochs > 1 ? static_cast<double>(epoch) / (config.epochs - 1) : 0.0;
            sgd.set_learning_rate(config.lr + t * (*config.lr_end - config.lr));
        }
        std::mt19937_64 shuffle_rng(detail::mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double l2_sum = 0.0, ce_sum = 0.0;
        bool any_l2 = false;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t count = std::min(batch, order.size() - start);
            for (auto& wk : workers)
                detail::copy_weights(master, wk);
            detail::parallel_for(threads, count, [&](int worker, std::size_t k) {
                auto& model = workers[static_cast<std::size_t>(worker)];
                const std::size_t index = order[start + k];
                const auto& sample = data.train[index];
                const Image* image = &sample.image;
                const BinaryMask* mask = &sample.mask;
                const DistanceMap* dmap = sample.dmap ? &*sample.dmap : nullptr;
                PhantomSample warped;
                DistanceMap warped_dmap;
                if (config.augment.prob > 0.0) {
                    std::mt19937_64 rng(detail::mix_seed(detail::mix_seed(config.seed, 0xA06ull + epoch), index));
                    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.augment.prob) {
                        const auto field = random_field(h, w, config.augment.amplitude, rng(), config.augment.sigma);
                        warped = elastic_augment(sample.image, sample.mask, field);
                        const auto fg = count_foreground(warped.mask);
                        if (fg > 0 && fg < warped.mask.size()) {
                            image = &warped.image;
                            mask = &warped.mask;
                            if (lambda > 0.0) {
                                warped_dmap = mask_to_distance_map(warped.mask);
                                dmap = &warped_dmap;
                            }
                        }
                    }
                }
                if (lambda > 0.0 && !dmap)
                    fail(ErrorKind::IoFailure, "train: sample '" + sample.id + "' has no distance map");
                model.zero_grad();
                const auto out = model.forward(pseudo_color<Real>(*image));
                const nn::Tensor4<Real> target = lambda > 0.0 ? grid_to_tensor<Real>(*dmap) : nn::Tensor4<Real>();
                const auto loss = combined_loss(out.dmap, lambda > 0.0 ? target : out.dmap, out.logits,
                                                std::span<const BinaryMask>(mask, 1), lambda);
                if (!std::isfinite(loss.value))
                    fail(ErrorKind::DivergedTraining, "loss became non-finite at epoch " + std::to_string(epoch));
                model.backward(loss.d_dmap, loss.d_logits, classifier_active);
                auto& slot = slots[k];
                auto params = model.parameters();
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto g = params[p].tensor->grad();
                    std::copy(g.begin(), g.end(), slot.begin() + static_cast<std::ptrdiff_t>(offsets[p]));
                }
                losses[k] = {loss.l2, loss.ce};
            });
            const Real inv = static_cast<Real>(1.0 / static_cast<double>(count));
            for (std::size_t p = 0; p < tensors.size(); ++p) {
                auto g = tensors[p]->grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    Real s = Real(0);
                    for (std::size_t k = 0; k < count; ++k)
                        s += slots[k][offsets[p] + i];
                    g[i] = s * inv;
                }
            }
            for (std::size_t k = 0; k < count; ++k) {
                if (losses[k].l2) {
                    l2_sum += *losses[k].l2;
                    any_l2 = true;
                    ++result.counters.l2_evaluations;
                }
                ce_sum += losses[k].ce;
            }
            result.counters.samples_seen += count;
            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (auto* t : tensors)
                    for (Real g : t->grad())
                        sq += static_cast<double>(g) * static_cast<double>(g);
                const double norm = std::sqrt(sq);
                if (norm > config.clip_norm) {
                    const Real scale = static_cast<Real>(config.clip_norm / norm);
                    for (auto* t : tensors)
                        for (Real& g : t->grad())
                            g *= scale;
                }
            }
            sgd.step(tensors);
            for (auto* t : tensors)
                if (!t->all_finite())
                    fail(ErrorKind::DivergedTraining, "parameters became non-finite at epoch " + std::to_string(epoch));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lambda = lambda;
        const double n = static_cast<double>(order.size());
        if (any_l2)
            rec.l2 = l2_sum / n;
        rec.ce = ce_sum / n;
        if (!data.test.empty()) {
            for (auto& wk : workers)
                detail::copy_weights(master, wk);
            rec.val_dice = detail::mean_dice(workers, std::span<const TrainSample>(data.test));
        }
        result.log.push_back(rec);
        if (hooks.on_epoch)
            hooks.on_epoch(rec);
    }
    return result;
}

// --- checkpoint files -----------------------------------------------------

inline std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint)
{
    return checkpoint.string() + ".config.json";
}

template <typename Real>
void save_model(const std::filesystem::path& path, Pipeline<Real>& model, const TrainConfig& config)
{
    const auto params = model.parameters();
    nn::save_checkpoint(path, nn::to_records<Real>(params));
    const auto text = to_json(config).dump(2) + "\n";
    io::detail::write_file(config_sidecar(path), std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Rebuilds a pipeline from a checkpoint and its pipeline config.
template <typename Real = float>
Pipeline<Real> load_model(const std::filesystem::path& path, const PipelineConfig& config)
{
    Pipeline<Real> model(config, 0);
    const auto records = nn::load_checkpoint(path);
    const auto params = model.parameters();
    nn::apply_records<Real>(params, records);
    return model;
}

} // namespace bdrseg
