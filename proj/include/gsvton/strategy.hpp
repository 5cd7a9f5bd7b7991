#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsvton/dataset.hpp"
#include "gsvton/edit.hpp"
#include "gsvton/metrics.hpp"
#include "gsvton/optimize.hpp"
#include "gsvton/refine.hpp"

namespace gsvton {

enum class StrategyKind { err, iterative_du };
std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

enum class RestoreKind { identity, downsample };
enum class PriorKind { smoothing, passthrough };

struct RestoreConfig {
    RestoreKind kind = RestoreKind::identity;
    int factor = 2;  // downsample only
    PriorKind prior = PriorKind::smoothing;
};

struct RefineConfig {
    bool face = true;
    bool sparse = true;
    double tau = kDefaultTau;
    RestoreConfig restore;
};

struct EditJob {
    StrategyKind strategy = StrategyKind::err;
    int rounds = 1;
    int optimize_iters_per_round = 1500;
    EditorBinding editor;
    GarmentPrompt prompt;
    std::string garment_path;  // source of prompt.garment_image, kept for serialization
    RefineConfig refine;
    double region_rho = 0.6;
    bool retrack_each_round = false;
    std::uint64_t seed = 0;  // optimizer view order
    /// Remote /face and /segment services; empty uses dataset metadata.
    std::string aux_endpoint;
    LearningRates learning_rates;

    /// Throws InvalidParameter (or PreconditionError for rounds < 1).
    void validate() const;
    nlohmann::json to_json() const;
    /// Relative garment paths resolve against `base_dir`.
    static EditJob from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

struct RoundReport {
    int round = 0;
    std::vector<int> flagged;
    std::vector<double> loss_curve;  // total loss of every optimizer step
};

struct EditReport {
    std::string strategy;
    std::string dataset_id;
    nlohmann::json job;
    nlohmann::json overrides = nlohmann::json::object();
    std::vector<RoundReport> rounds;
    std::vector<int> editable;
    std::vector<UpdateEvent> log;
    bool log_ordering_ok = false;  // ERR ordering invariant evaluated on `log`
    std::vector<MetricReport> metrics;

    nlohmann::json to_json() const;
};

struct RunHooks {
    /// Called after every optimizer step with the number of steps taken so far in the run.
    std::function<void(int step, const GaussianCloud& cloud)> on_step;
};

struct EditResult {
    GaussianCloud cloud;
    EditReport report;
};

/// Edit + refine every view, commit all Stage1-4 images in one transaction per
/// round, then optimize the editable set. Stage0 is the conditioning input of
/// every edit. On failure the dataset keeps its last committed state.
EditResult run_err(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job, const RunHooks& hooks = {});

/// Per view: edit + face composite + restore, commit, then k optimizer steps
/// (k = optimize_iters_per_round / views, at least 1).
EditResult run_iterative_du(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job,
                            const RunHooks& hooks = {});

EditResult run_job(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job, const RunHooks& hooks = {});

/// A Gaussian is editable iff its center projects inside the view's mask in at
/// least rho of the views where it is not culled.
IndexSet track_editable_gaussians(const GaussianCloud& cloud, const std::map<int, Mask>& masks,
                                  const std::vector<CameraView>& cameras, double rho);

/// Atan2(Cr, Cb) of the mean chroma under `mask`; nullopt for an empty mask.
std::optional<double> garment_hue(const Image& image, const Mask& mask);
/// Circular variance 1 - |mean unit hue vector| over views with a non-empty mask.
double hue_spread(const std::vector<double>& hues);
/// Renders every camera and returns the hue spread over the per-view masks.
double render_hue_spread(const GaussianCloud& cloud, const std::vector<CameraView>& cameras,
                         const std::map<int, Mask>& masks);

/// Rows of (Stage0, Stage4, render) per view, one tile each.
Image comparison_grid(const ViewDataset& dataset, const GaussianCloud& cloud, int max_views = 8);

/// Differences between two EditReport JSON documents.
nlohmann::json compare_reports(const nlohmann::json& a, const nlohmann::json& b);

} // namespace gsvton
