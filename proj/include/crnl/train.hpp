#pragma once

// Training harness: per-method Table-row defaults, the desk-scale profile,
// recognizer / autoencoder / distillation loops, the denoise->recognize
// pipeline, evaluation, and run artifacts (checkpoints, loss.csv, SVG
// curves, reconstruction images).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crnl/datagen.hpp"
#include "crnl/distill.hpp"
#include "crnl/heads.hpp"
#include "crnl/metrics.hpp"
#include "crnl/optim.hpp"

namespace crnl {

enum class Method {
    crnn,
    cap,
    stretch,
    attention,
    ddecae,
    line_ddecae,
    ddecae_crnn,
    line_ddecae_crnn,
    kd_single,
    kd_multi,
};
Method method_from_string(const std::string& s);
std::string method_to_string(Method m);
bool method_is_autoencoder(Method m);
bool method_is_kd(Method m);
bool method_is_pipeline(Method m);

enum class OptKind { nesterov_sgd, adam_amsgrad, adam };
OptKind opt_from_string(const std::string& s);
std::string opt_to_string(OptKind o);

struct TrainConfig {
    Method method = Method::cap;
    int epochs = 200;
    int64_t batch_size = 20;
    OptKind optimizer = OptKind::nesterov_sgd;
    real init_lr = 1e-4;
    real lr_decay_factor = 2;
    int lr_decay_every = 60;
    real weight_decay = 1e-6;
    KdConfig kd;
    uint64_t seed = 1;
    int scale = 1;

    // architecture knobs; empty vectors mean "regime defaults"
    std::vector<int64_t> channels;
    std::vector<int> convs_per_block;
    std::vector<std::array<int64_t, 2>> pools;
    int64_t hidden = 0;  // 0 = default
    int lstm_layers = 0;
    bool mask_on_features = false;
    real clip_norm = 5.0;

    std::string ae_checkpoint;  // pipeline methods
    int64_t eval_max_examples = 0;  // 0 = whole test split
};

// Table-row defaults for the method, then the desk-scale profile
// (epochs / scale, half channels and hidden when scale > 1).
TrainConfig default_config(Method m, int scale = 1);
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);
std::string config_hash(const TrainConfig& cfg);

// concrete architecture for a dataset regime
CrnnSpec crnn_spec_for(const TrainConfig& cfg, const DatasetSpec& data, HeadKind head);
// the half-sized student: half conv channels, one BiLSTM layer
CrnnSpec student_spec_from(const CrnnSpec& teacher);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    std::optional<double> test_loss;  // autoencoder held-out MSE
    std::optional<double> clp, ilp;
    std::optional<double> teacher_loss, teacher_clp;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::string checkpoint;          // final model (student for KD runs)
    std::string teacher_checkpoint;  // KD runs only
    EvalResult eval;                 // recognizers: final test evaluation
    double final_test_mse = 0;       // autoencoders
    int64_t param_count = 0;
    int64_t teacher_param_count = 0;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir);

// --- model <-> checkpoint ----------------------------------------------------

nlohmann::json crnn_spec_to_json(const CrnnSpec& spec);
CrnnSpec crnn_spec_from_json(const nlohmann::json& j);
void save_crnn(const std::string& path, const CrnnModel& model, int64_t step,
               const std::string& cfg_hash);
CrnnModel load_crnn(const std::string& path);
void save_autoencoder(const std::string& path, const Autoencoder& ae, int64_t step,
                      const std::string& cfg_hash, bool line_model);
// line_model reports whether the checkpoint regresses the (negated) line layer
Autoencoder load_autoencoder(const std::string& path, bool* line_model = nullptr);

// --- evaluation / inference ---------------------------------------------------

EvalResult evaluate(const CrnnModel& model, const std::vector<ImageSample>& samples,
                    int64_t batch_size, int64_t max_examples = 0);

// decode one image (all rows concatenated in reading order for multi-row heads)
std::vector<LabelSeq> infer_image(const CrnnModel& model, const std::vector<uint8_t>& pixels,
                                  int64_t height, int64_t width);

// Runs the autoencoder over every sample and rebuilds the corpus with the
// cleaned images: compose_clean for the line reconstructor, the direct text
// estimate for the baseline.
Dataset denoise_dataset(const Autoencoder& ae, bool line_model, const Dataset& data,
                        int64_t batch_size);

// --- run artifacts -------------------------------------------------------------

void write_loss_csv(const std::string& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_loss_csv(const std::string& path);

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series);

Tensor images_to_tensor(const std::vector<ImageSample>& samples,
                        const std::vector<int64_t>& indices);

}  // namespace crnl
