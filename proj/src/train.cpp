#include "crnl/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "crnl/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace crnl {

// --- names ---------------------------------------------------------------

Method method_from_string(const std::string& s) {
    if (s == "crnn") return Method::crnn;
    if (s == "cap") return Method::cap;
    if (s == "stretch") return Method::stretch;
    if (s == "attention") return Method::attention;
    if (s == "ddecae") return Method::ddecae;
    if (s == "line_ddecae") return Method::line_ddecae;
    if (s == "ddecae_crnn") return Method::ddecae_crnn;
    if (s == "line_ddecae_crnn") return Method::line_ddecae_crnn;
    if (s == "kd_single") return Method::kd_single;
    if (s == "kd_multi") return Method::kd_multi;
    throw ConfigError("unknown method '" + s + "'");
}

std::string method_to_string(Method m) {
    switch (m) {
        case Method::crnn: return "crnn";
        case Method::cap: return "cap";
        case Method::stretch: return "stretch";
        case Method::attention: return "attention";
        case Method::ddecae: return "ddecae";
        case Method::line_ddecae: return "line_ddecae";
        case Method::ddecae_crnn: return "ddecae_crnn";
        case Method::line_ddecae_crnn: return "line_ddecae_crnn";
        case Method::kd_single: return "kd_single";
        case Method::kd_multi: return "kd_multi";
    }
    return "?";
}

bool method_is_autoencoder(Method m) {
    return m == Method::ddecae || m == Method::line_ddecae;
}
bool method_is_kd(Method m) { return m == Method::kd_single || m == Method::kd_multi; }
bool method_is_pipeline(Method m) {
    return m == Method::ddecae_crnn || m == Method::line_ddecae_crnn;
}

OptKind opt_from_string(const std::string& s) {
    if (s == "nesterov_sgd" || s == "nesterov") return OptKind::nesterov_sgd;
    if (s == "adam_amsgrad" || s == "amsgrad") return OptKind::adam_amsgrad;
    if (s == "adam") return OptKind::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}
std::string opt_to_string(OptKind o) {
    switch (o) {
        case OptKind::nesterov_sgd: return "nesterov_sgd";
        case OptKind::adam_amsgrad: return "adam_amsgrad";
        case OptKind::adam: return "adam";
    }
    return "?";
}

// --- config ----------------------------------------------------------------

TrainConfig default_config(Method m, int scale) {
    if (scale < 1) throw ConfigError("config: scale must be >= 1");
    TrainConfig c;
    c.method = m;
    c.scale = scale;
    switch (m) {
        case Method::crnn:
        case Method::cap:
            c.epochs = 200;
            c.batch_size = 20;
            c.optimizer = OptKind::nesterov_sgd;
            break;
        case Method::stretch:
        case Method::attention:
            c.epochs = 200;
            c.batch_size = 20;
            c.optimizer = OptKind::adam_amsgrad;
            break;
        case Method::ddecae:
        case Method::line_ddecae:
            c.epochs = 100;
            c.batch_size = 64;
            c.optimizer = OptKind::adam;
            c.init_lr = 1e-3;
            c.lr_decay_factor = 5;
            c.weight_decay = 0;
            break;
        case Method::ddecae_crnn:
        case Method::line_ddecae_crnn:
            c.epochs = 200;
            c.batch_size = 16;
            c.optimizer = OptKind::adam_amsgrad;
            break;
        case Method::kd_single:
            c.epochs = 300;
            c.batch_size = 16;
            c.optimizer = OptKind::nesterov_sgd;
            break;
        case Method::kd_multi:
            c.epochs = 300;
            c.batch_size = 16;
            c.optimizer = OptKind::adam_amsgrad;
            break;
    }
    if (scale > 1) c.epochs = std::max(1, c.epochs / scale);
    return c;
}

TrainConfig config_from_json(const json& j) {
    Method m = method_from_string(j.value("method", std::string("cap")));
    int scale = j.value("scale", 1);
    TrainConfig c = default_config(m, scale);
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
    if (j.contains("optimizer")) c.optimizer = opt_from_string(j.at("optimizer").get<std::string>());
    if (j.contains("init_lr")) c.init_lr = j.at("init_lr").get<real>();
    if (j.contains("lr_decay_factor")) c.lr_decay_factor = j.at("lr_decay_factor").get<real>();
    if (j.contains("lr_decay_every")) c.lr_decay_every = j.at("lr_decay_every").get<int>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<real>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("channels")) c.channels = j.at("channels").get<std::vector<int64_t>>();
    if (j.contains("convs_per_block"))
        c.convs_per_block = j.at("convs_per_block").get<std::vector<int>>();
    if (j.contains("pools"))
        for (const auto& p : j.at("pools"))
            c.pools.push_back({p[0].get<int64_t>(), p[1].get<int64_t>()});
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<int64_t>();
    if (j.contains("lstm_layers")) c.lstm_layers = j.at("lstm_layers").get<int>();
    if (j.contains("mask_on_features")) c.mask_on_features = j.at("mask_on_features").get<bool>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<real>();
    if (j.contains("ae_checkpoint")) c.ae_checkpoint = j.at("ae_checkpoint").get<std::string>();
    if (j.contains("eval_max_examples"))
        c.eval_max_examples = j.at("eval_max_examples").get<int64_t>();
    if (j.contains("kd")) {
        const auto& k = j.at("kd");
        c.kd.alpha = k.value("alpha", c.kd.alpha);
        c.kd.lambda1 = k.value("lambda1", c.kd.lambda1);
        c.kd.lambda2 = k.value("lambda2", c.kd.lambda2);
        c.kd.temperature = k.value("temperature", c.kd.temperature);
        c.kd.scale_soft_by_t2 = k.value("scale_soft_by_t2", c.kd.scale_soft_by_t2);
        c.kd.hard_from_teacher_argmax =
            k.value("hard_from_teacher_argmax", c.kd.hard_from_teacher_argmax);
    }
    return c;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["method"] = method_to_string(c.method);
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["optimizer"] = opt_to_string(c.optimizer);
    j["init_lr"] = c.init_lr;
    j["lr_decay_factor"] = c.lr_decay_factor;
    j["lr_decay_every"] = c.lr_decay_every;
    j["weight_decay"] = c.weight_decay;
    j["seed"] = c.seed;
    j["scale"] = c.scale;
    if (!c.channels.empty()) j["channels"] = c.channels;
    if (!c.convs_per_block.empty()) j["convs_per_block"] = c.convs_per_block;
    if (!c.pools.empty()) {
        json p = json::array();
        for (const auto& q : c.pools) p.push_back({q[0], q[1]});
        j["pools"] = std::move(p);
    }
    if (c.hidden) j["hidden"] = c.hidden;
    if (c.lstm_layers) j["lstm_layers"] = c.lstm_layers;
    j["mask_on_features"] = c.mask_on_features;
    j["clip_norm"] = c.clip_norm;
    if (!c.ae_checkpoint.empty()) j["ae_checkpoint"] = c.ae_checkpoint;
    if (c.eval_max_examples) j["eval_max_examples"] = c.eval_max_examples;
    j["kd"] = {{"alpha", c.kd.alpha},
               {"lambda1", c.kd.lambda1},
               {"lambda2", c.kd.lambda2},
               {"temperature", c.kd.temperature},
               {"scale_soft_by_t2", c.kd.scale_soft_by_t2},
               {"hard_from_teacher_argmax", c.kd.hard_from_teacher_argmax}};
    return j;
}

std::string config_hash(const TrainConfig& cfg) {
    uint64_t h = fnv1a64(config_to_json(cfg).dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- architecture ------------------------------------------------------------

CrnnSpec crnn_spec_for(const TrainConfig& cfg, const DatasetSpec& data, HeadKind head) {
    bool multi = data.rows > 1;
    CrnnSpec s;
    s.head = head;
    s.img_h = data.canvas_h;
    s.img_w = data.canvas_w;
    if (multi) {
        s.channels = {64, 128, 256, 256};
        s.convs_per_block = {1, 1, 2, 1};
        s.pools = {{2, 2}, {2, 2}, {2, 2}, {2, 2}};
    } else {
        s.channels = {64, 128, 256};
        s.convs_per_block = {1, 2, 2};
        s.pools = {{2, 2}, {2, 2}, {2, 3}};
    }
    s.hidden = 256;
    s.lstm_layers = 2;
    if (cfg.scale > 1) {
        for (auto& c : s.channels) c = std::max<int64_t>(4, c / 2);
        s.hidden = std::max<int64_t>(16, s.hidden / 2);
    }
    if (!cfg.channels.empty()) s.channels = cfg.channels;
    if (!cfg.convs_per_block.empty()) s.convs_per_block = cfg.convs_per_block;
    if (!cfg.pools.empty()) s.pools = cfg.pools;
    if (cfg.hidden) s.hidden = cfg.hidden;
    if (cfg.lstm_layers) s.lstm_layers = cfg.lstm_layers;
    s.classes = data.vocab_size + 1;
    s.rows = data.rows;
    s.mask_on_features = cfg.mask_on_features;
    s.validate();
    return s;
}

CrnnSpec student_spec_from(const CrnnSpec& teacher) {
    CrnnSpec s = teacher;
    for (auto& c : s.channels) c = std::max<int64_t>(2, c / 2);
    s.lstm_layers = 1;  // hidden stays: state matching needs equal dimensions
    return s;
}

// --- model <-> checkpoint ------------------------------------------------------

json crnn_spec_to_json(const CrnnSpec& s) {
    json j;
    j["kind"] = "crnn";
    j["head"] = head_to_string(s.head);
    j["img_h"] = s.img_h;
    j["img_w"] = s.img_w;
    j["channels"] = s.channels;
    j["convs_per_block"] = s.convs_per_block;
    json pools = json::array();
    for (const auto& p : s.pools) pools.push_back({p[0], p[1]});
    j["pools"] = std::move(pools);
    j["hidden"] = s.hidden;
    j["lstm_layers"] = s.lstm_layers;
    j["classes"] = s.classes;
    j["rows"] = s.rows;
    j["mask_on_features"] = s.mask_on_features;
    return j;
}

CrnnSpec crnn_spec_from_json(const json& j) {
    CrnnSpec s;
    s.head = head_from_string(j.at("head").get<std::string>());
    s.img_h = j.at("img_h").get<int64_t>();
    s.img_w = j.at("img_w").get<int64_t>();
    s.channels = j.at("channels").get<std::vector<int64_t>>();
    s.convs_per_block = j.at("convs_per_block").get<std::vector<int>>();
    s.pools.clear();
    for (const auto& p : j.at("pools")) s.pools.push_back({p[0].get<int64_t>(), p[1].get<int64_t>()});
    s.hidden = j.at("hidden").get<int64_t>();
    s.lstm_layers = j.at("lstm_layers").get<int>();
    s.classes = j.at("classes").get<int64_t>();
    s.rows = j.at("rows").get<int64_t>();
    s.mask_on_features = j.at("mask_on_features").get<bool>();
    return s;
}

void save_crnn(const std::string& path, const CrnnModel& model, int64_t step,
               const std::string& cfg_hash) {
    save_checkpoint(path, crnn_spec_to_json(model.spec()), step, cfg_hash, model.params());
}

CrnnModel load_crnn(const std::string& path) {
    CheckpointData ckpt = load_checkpoint(path);
    if (ckpt.manifest.at("model").value("kind", std::string()) != "crnn")
        throw IoError("load_crnn: " + path + " does not hold a crnn model");
    Rng rng(0);
    CrnnModel m = CrnnModel::make(crnn_spec_from_json(ckpt.manifest.at("model")), rng);
    apply_checkpoint(ckpt, m.params());
    return m;
}

void save_autoencoder(const std::string& path, const Autoencoder& ae, int64_t step,
                      const std::string& cfg_hash, bool line_model) {
    save_checkpoint(path,
                    json{{"kind", "autoencoder"}, {"target", line_model ? "line" : "text"}}, step,
                    cfg_hash, ae.params());
}

Autoencoder load_autoencoder(const std::string& path, bool* line_model) {
    CheckpointData ckpt = load_checkpoint(path);
    if (ckpt.manifest.at("model").value("kind", std::string()) != "autoencoder")
        throw IoError("load_autoencoder: " + path + " does not hold an autoencoder");
    if (line_model)
        *line_model = ckpt.manifest.at("model").value("target", std::string()) == "line";
    Rng rng(0);
    Autoencoder ae = Autoencoder::make(rng);
    apply_checkpoint(ckpt, ae.params());
    return ae;
}

// --- batching -------------------------------------------------------------------

Tensor images_to_tensor(const std::vector<ImageSample>& samples,
                        const std::vector<int64_t>& indices) {
    if (indices.empty()) throw ContractError("images_to_tensor: empty batch");
    int64_t h = samples[indices[0]].height, w = samples[indices[0]].width;
    Tensor t = Tensor::zeros({static_cast<int64_t>(indices.size()), 1, h, w});
    real* dst = t.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = samples[indices[i]];
        if (s.height != h || s.width != w)
            throw ShapeError("images_to_tensor: mixed image sizes in batch");
        for (int64_t p = 0; p < h * w; ++p)
            dst[i * h * w + p] = static_cast<real>(s.image[p]) / real(255);
    }
    return t;
}

static Tensor layers_to_tensor(const std::vector<ImageSample>& samples,
                               const std::vector<int64_t>& indices, bool line_layer,
                               real sign) {
    int64_t h = samples[indices[0]].height, w = samples[indices[0]].width;
    Tensor t = Tensor::zeros({static_cast<int64_t>(indices.size()), 1, h, w});
    real* dst = t.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = samples[indices[i]];
        const auto& src = line_layer ? s.line_layer : s.text_layer;
        if (static_cast<int64_t>(src.size()) != h * w)
            throw ContractError("autoencoder targets need the separated layers (boxed regime)");
        for (int64_t p = 0; p < h * w; ++p)
            dst[i * h * w + p] = sign * static_cast<real>(src[p]) / real(255);
    }
    return t;
}

static LabelSeq concat_labels(const ImageSample& s) {
    LabelSeq out;
    for (const auto& row : s.labels)
        out.classes.insert(out.classes.end(), row.classes.begin(), row.classes.end());
    return out;
}

static std::vector<std::vector<LabelSeq>> batch_labels(HeadKind head,
                                                       const std::vector<ImageSample>& samples,
                                                       const std::vector<int64_t>& indices) {
    std::vector<std::vector<LabelSeq>> out;
    out.reserve(indices.size());
    for (int64_t i : indices) {
        const auto& s = samples[i];
        if (head == HeadKind::attention)
            out.push_back(s.labels);
        else if (head == HeadKind::stretch)
            out.push_back({concat_labels(s)});
        else
            out.push_back({s.labels[0]});
    }
    return out;
}

static int64_t head_frames(const CrnnSpec& spec) {
    switch (spec.head) {
        case HeadKind::stretch: return spec.feat_h() * spec.feat_w();
        default: return spec.feat_w();
    }
}

static void check_feasible(const CrnnSpec& spec, const Dataset& data) {
    int64_t T = head_frames(spec);
    auto scan = [&](const std::vector<ImageSample>& split, const char* name) {
        for (const auto& s : split) {
            std::vector<LabelSeq> units;
            if (spec.head == HeadKind::attention)
                units = s.labels;
            else if (spec.head == HeadKind::stretch)
                units = {concat_labels(s)};
            else
                units = {s.labels[0]};
            for (const auto& u : units) {
                int64_t need = u.size() + u.adjacent_repeats();
                if (need > T)
                    throw ConfigError("method emits " + std::to_string(T) +
                                      " frames but " + name + " example " + std::to_string(s.id) +
                                      " needs " + std::to_string(need) +
                                      "; shrink labels or widen the feature map");
            }
        }
    };
    scan(data.train, "train");
    scan(data.test, "test");
}

static void check_regime(Method m, const DatasetSpec& d) {
    auto fail = [&](const std::string& want) {
        throw ConfigError("method " + method_to_string(m) + " expects " + want + ", dataset '" +
                          d.name + "' has " + std::to_string(d.rows) + " rows, boxed=" +
                          (d.boxed ? "true" : "false"));
    };
    switch (m) {
        case Method::crnn:
        case Method::cap:
        case Method::kd_single:
            if (d.rows != 1) fail("a single-row regime (S_data1/S_data2)");
            break;
        case Method::stretch:
        case Method::attention:
            if (d.rows < 2) fail("a multi-row regime (M_data1/M_data2)");
            break;
        case Method::ddecae:
        case Method::line_ddecae:
        case Method::ddecae_crnn:
        case Method::line_ddecae_crnn:
            if (!d.boxed) fail("the boxed regime (M_data2)");
            break;
        case Method::kd_multi:
            if (d.rows < 2 || d.boxed) fail("the plain multi-row regime (M_data1)");
            break;
    }
}

static std::vector<int64_t> shuffled_indices(int64_t n, Rng rng) {
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    for (int64_t i = n - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

static std::vector<std::vector<int64_t>> batches_of(const std::vector<int64_t>& order,
                                                    int64_t batch) {
    std::vector<std::vector<int64_t>> out;
    for (size_t at = 0; at < order.size(); at += batch) {
        size_t end = std::min(order.size(), at + batch);
        out.emplace_back(order.begin() + at, order.begin() + end);
    }
    return out;
}

static std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
    switch (cfg.optimizer) {
        case OptKind::nesterov_sgd:
            return std::make_unique<NesterovSgd>(real(0.9), cfg.weight_decay);
        case OptKind::adam_amsgrad: return std::make_unique<Adam>(true, cfg.weight_decay);
        case OptKind::adam: return std::make_unique<Adam>(false, cfg.weight_decay);
    }
    throw ConfigError("bad optimizer");
}

// --- evaluation -------------------------------------------------------------------

static int64_t positionwise_hits(const LabelSeq& pred, const LabelSeq& gt) {
    int64_t n = std::min(pred.size(), gt.size()), hits = 0;
    for (int64_t j = 0; j < n; ++j)
        if (pred.classes[j] == gt.classes[j]) ++hits;
    return hits;
}

EvalResult evaluate(const CrnnModel& model, const std::vector<ImageSample>& samples,
                    int64_t batch_size, int64_t max_examples) {
    NoGradGuard ng;
    EvalResult res;
    int64_t n = static_cast<int64_t>(samples.size());
    if (max_examples > 0) n = std::min(n, max_examples);
    if (n == 0) return res;

    std::vector<LabelSeq> unit_preds, unit_gts, img_preds, img_gts;
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    for (const auto& idxs : batches_of(order, batch_size)) {
        CrnnForward fwd = model.forward(images_to_tensor(samples, idxs));
        for (size_t bi = 0; bi < idxs.size(); ++bi) {
            const ImageSample& s = samples[idxs[bi]];
            LabelSeq img_p, img_g;
            if (model.spec().head == HeadKind::attention) {
                for (size_t r = 0; r < fwd.logits[bi].size(); ++r) {
                    LabelSeq pred = greedy_decode(fwd.logits[bi][r]);
                    const LabelSeq& gt = s.labels[r];
                    res.records.push_back({s.id, static_cast<int>(r), gt, pred,
                                           positionwise_hits(pred, gt), pred == gt});
                    unit_preds.push_back(pred);
                    unit_gts.push_back(gt);
                    img_p.classes.insert(img_p.classes.end(), pred.classes.begin(),
                                         pred.classes.end());
                    img_g.classes.insert(img_g.classes.end(), gt.classes.begin(),
                                         gt.classes.end());
                }
            } else {
                LabelSeq pred = greedy_decode(fwd.logits[bi][0]);
                LabelSeq gt = model.spec().head == HeadKind::stretch ? concat_labels(s)
                                                                     : s.labels[0];
                res.records.push_back(
                    {s.id, 0, gt, pred, positionwise_hits(pred, gt), pred == gt});
                unit_preds.push_back(pred);
                unit_gts.push_back(gt);
                img_p = pred;
                img_g = gt;
            }
            img_preds.push_back(std::move(img_p));
            img_gts.push_back(std::move(img_g));
        }
    }
    res.clp = clp(unit_preds, unit_gts);
    res.ilp = ilp(img_preds, img_gts);
    res.edit_rate = edit_rate(unit_preds, unit_gts);
    return res;
}

std::vector<LabelSeq> infer_image(const CrnnModel& model, const std::vector<uint8_t>& pixels,
                                  int64_t height, int64_t width) {
    NoGradGuard ng;
    Tensor t = Tensor::zeros({1, 1, height, width});
    if (static_cast<int64_t>(pixels.size()) != height * width)
        throw ShapeError("infer: pixel buffer does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
    for (int64_t p = 0; p < height * width; ++p)
        t.data()[p] = static_cast<real>(pixels[p]) / real(255);
    CrnnForward fwd = model.forward(t);
    std::vector<LabelSeq> out;
    for (const auto& row : fwd.logits[0]) out.push_back(greedy_decode(row));
    return out;
}

// --- autoencoder helpers --------------------------------------------------------

static double autoencoder_mse(const Autoencoder& ae, const std::vector<ImageSample>& samples,
                              bool line_model, int64_t batch_size) {
    NoGradGuard ng;
    double total = 0;
    int64_t count = 0;
    std::vector<int64_t> order(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<int64_t>(i);
    for (const auto& idxs : batches_of(order, batch_size)) {
        Tensor x = images_to_tensor(samples, idxs);
        Tensor target = layers_to_tensor(samples, idxs, line_model, line_model ? real(-1) : real(1));
        Tensor d = sub(ae.forward(x), target);
        total += mean_all(mul(d, d)).item() * static_cast<double>(idxs.size());
        count += static_cast<int64_t>(idxs.size());
    }
    return total / static_cast<double>(count);
}

Dataset denoise_dataset(const Autoencoder& ae, bool line_model, const Dataset& data,
                        int64_t batch_size) {
    NoGradGuard ng;
    Dataset out;
    out.spec = data.spec;
    out.spec.boxed = false;  // cleaned corpus carries no layer split
    out.master_seed = data.master_seed;
    out.vocab = data.vocab;

    auto run = [&](const std::vector<ImageSample>& src, std::vector<ImageSample>& dst) {
        std::vector<int64_t> order(src.size());
        for (size_t i = 0; i < src.size(); ++i) order[i] = static_cast<int64_t>(i);
        for (const auto& idxs : batches_of(order, batch_size)) {
            Tensor x = images_to_tensor(src, idxs);
            Tensor y = ae.forward(x);
            Tensor cleaned = line_model ? compose_clean(x, y) : clip(y, 0, 1);
            const real* v = cleaned.data();
            int64_t hw = src[idxs[0]].height * src[idxs[0]].width;
            for (size_t bi = 0; bi < idxs.size(); ++bi) {
                ImageSample s;
                s.id = src[idxs[bi]].id;
                s.height = src[idxs[bi]].height;
                s.width = src[idxs[bi]].width;
                s.labels = src[idxs[bi]].labels;
                s.image.resize(hw);
                for (int64_t p = 0; p < hw; ++p) {
                    double q = std::lround(static_cast<double>(v[bi * hw + p]) * 255.0);
                    s.image[p] = static_cast<uint8_t>(std::clamp(q, 0.0, 255.0));
                }
                dst.push_back(std::move(s));
            }
        }
    };
    run(data.train, out.train);
    run(data.test, out.test);
    return out;
}

// --- run artifacts ----------------------------------------------------------------

static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_loss_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw IoError("write_loss_csv: cannot open " + path);
    f << "epoch,split,loss,clp,ilp\n";
    for (const auto& e : log) {
        f << e.epoch << ",train," << fmt(e.train_loss) << ",,\n";
        if (e.test_loss || e.clp) {
            f << e.epoch << ",test," << (e.test_loss ? fmt(*e.test_loss) : "") << ","
              << (e.clp ? fmt(*e.clp) : "") << "," << (e.ilp ? fmt(*e.ilp) : "") << "\n";
        }
        if (e.teacher_loss) f << e.epoch << ",train_teacher," << fmt(*e.teacher_loss) << ",,\n";
        if (e.teacher_clp)
            f << e.epoch << ",test_teacher,," << fmt(*e.teacher_clp) << ",\n";
    }
}

std::vector<EpochLog> read_loss_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_loss_csv: cannot open " + path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<EpochLog> log;
    auto at_epoch = [&](int epoch) -> EpochLog& {
        for (auto& e : log)
            if (e.epoch == epoch) return e;
        log.push_back(EpochLog{});
        log.back().epoch = epoch;
        return log.back();
    };
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(5);
        EpochLog& e = at_epoch(std::stoi(cells[0]));
        const std::string& split = cells[1];
        if (split == "train" && !cells[2].empty()) e.train_loss = std::stod(cells[2]);
        if (split == "test") {
            if (!cells[2].empty()) e.test_loss = std::stod(cells[2]);
            if (!cells[3].empty()) e.clp = std::stod(cells[3]);
            if (!cells[4].empty()) e.ilp = std::stod(cells[4]);
        }
        if (split == "train_teacher" && !cells[2].empty()) e.teacher_loss = std::stod(cells[2]);
        if (split == "test_teacher" && !cells[3].empty()) e.teacher_clp = std::stod(cells[3]);
    }
    return log;
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series) {
    constexpr double W = 720, H = 440, ml = 60, mr = 20, mt = 40, mb = 40;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream f(path);
    if (!f) throw IoError("write_svg_plot: cannot open " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title
      << "</text>\n";
    f << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    f << "<text x='" << ml << "' y='" << H - mb + 16 << "' font-size='11'>" << xmin
      << "</text>\n";
    f << "<text x='" << W - mr - 20 << "' y='" << H - mb + 16 << "' font-size='11'>" << xmax
      << "</text>\n";
    f << "<text x='4' y='" << H - mb << "' font-size='11'>" << fmt(ymin) << "</text>\n";
    f << "<text x='4' y='" << mt + 5 << "' font-size='11'>" << fmt(ymax) << "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        f << "<polyline fill='none' stroke='" << colors[si % 6] << "' stroke-width='1.5' points='";
        for (auto [x, y] : series[si].points) f << sx(x) << "," << sy(y) << " ";
        f << "'/>\n";
        f << "<text x='" << W - mr - 150 << "' y='" << mt + 16 * si + 8 << "' fill='"
          << colors[si % 6] << "' font-size='12'>" << series[si].name << "</text>\n";
    }
    f << "</svg>\n";
}

static void write_run_plot(const std::string& path, const std::string& title,
                           const std::vector<EpochLog>& log) {
    PlotSeries train{"train loss", {}}, test{"test loss", {}};
    for (const auto& e : log) {
        train.points.push_back({static_cast<double>(e.epoch), e.train_loss});
        if (e.test_loss) test.points.push_back({static_cast<double>(e.epoch), *e.test_loss});
    }
    std::vector<PlotSeries> series{train};
    if (!test.points.empty()) series.push_back(test);
    write_svg_plot(path, title, series);
}

// --- training loops -----------------------------------------------------------------

static HeadKind head_for_method(Method m) {
    switch (m) {
        case Method::crnn:
        case Method::kd_single: return HeadKind::baseline;
        case Method::cap: return HeadKind::cap;
        case Method::attention: return HeadKind::attention;
        default: return HeadKind::stretch;  // stretch + pipelines + kd_multi
    }
}

static TrainResult train_recognizer(const TrainConfig& cfg, const Dataset& data,
                                    const std::string& out_dir, HeadKind head) {
    CrnnSpec spec = crnn_spec_for(cfg, data.spec, head);
    check_feasible(spec, data);
    Rng rng = Rng(cfg.seed).fork(0);
    CrnnModel model = CrnnModel::make(spec, rng);
    ParamList params = model.params();
    ParamList recurrent = model.recurrent_params();
    auto opt = make_optimizer(cfg);
    std::string hash = config_hash(cfg);

    TrainResult res;
    res.param_count = model.param_count();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        real lr = lr_schedule(epoch, cfg.init_lr, cfg.lr_decay_factor, cfg.lr_decay_every);
        auto order = shuffled_indices(static_cast<int64_t>(data.train.size()),
                                      Rng(cfg.seed).fork(1000 + epoch));
        double loss_sum = 0;
        for (const auto& idxs : batches_of(order, cfg.batch_size)) {
            Tensor x = images_to_tensor(data.train, idxs);
            CrnnForward fwd = model.forward(x);
            Tensor loss = multirow_ctc_loss(fwd.logits, batch_labels(head, data.train, idxs));
            zero_grads(params);
            backward(loss);
            clip_grad_norm(recurrent, cfg.clip_norm);
            opt->step(params, lr);
            loss_sum += loss.item() * static_cast<double>(idxs.size());
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(data.train.size());
        res.eval = evaluate(model, data.test, cfg.batch_size, cfg.eval_max_examples);
        log.clp = res.eval.clp;
        log.ilp = res.eval.ilp;
        res.log.push_back(log);
        if ((epoch + 1) % cfg.lr_decay_every == 0 && epoch + 1 < cfg.epochs)
            save_crnn(out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".crnl", model,
                      epoch + 1, hash);
    }
    res.checkpoint = out_dir + "/model.crnl";
    save_crnn(res.checkpoint, model, cfg.epochs, hash);
    write_loss_csv(out_dir + "/loss.csv", res.log);
    write_run_plot(out_dir + "/loss.svg", method_to_string(cfg.method), res.log);
    write_eval_csv(out_dir + "/eval.csv", res.eval.records);
    return res;
}

static void write_recon_samples(const Autoencoder& ae, bool line_model, const Dataset& data,
                                const std::string& out_dir) {
    NoGradGuard ng;
    int64_t n = std::min<size_t>(4, data.test.size());
    if (n == 0) return;
    std::vector<int64_t> idxs(n);
    for (int64_t i = 0; i < n; ++i) idxs[i] = i;
    Tensor x = images_to_tensor(data.test, idxs);
    Tensor y = ae.forward(x);
    Tensor shown = line_model ? compose_clean(x, y) : clip(y, 0, 1);
    int64_t h = data.test[0].height, w = data.test[0].width;
    for (int64_t i = 0; i < n; ++i) {
        auto dump = [&](const Tensor& t, const char* tag, real lo, real hi) {
            std::vector<uint8_t> px(h * w);
            for (int64_t p = 0; p < h * w; ++p) {
                double v = (static_cast<double>(t.data()[i * h * w + p]) - lo) / (hi - lo);
                px[p] = static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l));
            }
            write_pgm(out_dir + "/recon" + std::to_string(i) + "_" + tag + ".pgm", w, h, px);
        };
        dump(x, "input", 0, 1);
        dump(y, "output", line_model ? real(-1) : real(0), line_model ? real(0) : real(1));
        dump(shown, line_model ? "clean" : "text", 0, 1);
    }
}

static TrainResult train_autoencoder(const TrainConfig& cfg, const Dataset& data,
                                     const std::string& out_dir, bool line_model) {
    Rng rng = Rng(cfg.seed).fork(0);
    Autoencoder ae = Autoencoder::make(rng);
    ParamList params = ae.params();
    auto opt = make_optimizer(cfg);
    std::string hash = config_hash(cfg);

    TrainResult res;
    res.param_count = ae.param_count();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        real lr = lr_schedule(epoch, cfg.init_lr, cfg.lr_decay_factor, cfg.lr_decay_every);
        auto order = shuffled_indices(static_cast<int64_t>(data.train.size()),
                                      Rng(cfg.seed).fork(1000 + epoch));
        double loss_sum = 0;
        for (const auto& idxs : batches_of(order, cfg.batch_size)) {
            Tensor x = images_to_tensor(data.train, idxs);
            Tensor target =
                layers_to_tensor(data.train, idxs, line_model, line_model ? real(-1) : real(1));
            Tensor d = sub(ae.forward(x), target);
            Tensor loss = mean_all(mul(d, d));
            zero_grads(params);
            backward(loss);
            opt->step(params, lr);
            loss_sum += loss.item() * static_cast<double>(idxs.size());
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(data.train.size());
        log.test_loss = autoencoder_mse(ae, data.test, line_model, cfg.batch_size);
        res.log.push_back(log);
        if ((epoch + 1) % cfg.lr_decay_every == 0 && epoch + 1 < cfg.epochs)
            save_autoencoder(out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".crnl", ae,
                             epoch + 1, hash, line_model);
    }
    res.final_test_mse = res.log.empty() ? 0 : *res.log.back().test_loss;
    res.checkpoint = out_dir + "/model.crnl";
    save_autoencoder(res.checkpoint, ae, cfg.epochs, hash, line_model);
    write_loss_csv(out_dir + "/loss.csv", res.log);
    write_run_plot(out_dir + "/loss.svg", method_to_string(cfg.method), res.log);
    write_recon_samples(ae, line_model, data, out_dir);
    return res;
}

static TrainResult train_kd(const TrainConfig& cfg, const Dataset& data,
                            const std::string& out_dir, HeadKind head) {
    cfg.kd.validate();
    CrnnSpec t_spec = crnn_spec_for(cfg, data.spec, head);
    CrnnSpec s_spec = student_spec_from(t_spec);
    check_feasible(t_spec, data);

    Rng t_rng = Rng(cfg.seed).fork(0);
    Rng s_rng = Rng(cfg.seed).fork(1);
    Rng r_rng = Rng(cfg.seed).fork(2);
    CrnnModel teacher = CrnnModel::make(t_spec, t_rng);
    CrnnModel student = CrnnModel::make(s_spec, s_rng);

    // hint pairs at the tail of the conv stack, one 1x1 regressor each
    std::vector<int> hint_blocks;
    int nb = static_cast<int>(t_spec.channels.size());
    for (int b = std::max(0, nb - 2); b < nb; ++b) hint_blocks.push_back(b);
    std::vector<Conv2d> regressors;
    for (int b : hint_blocks)
        regressors.push_back(
            Conv2d::make(s_spec.channels[b], t_spec.channels[b], 1, 1, 1, 1, 0, 0, r_rng));

    ParamList t_params = teacher.params();
    ParamList t_recurrent = teacher.recurrent_params();
    ParamList s_params = student.params();
    for (size_t i = 0; i < regressors.size(); ++i)
        regressors[i].collect("regressor" + std::to_string(i), s_params);
    ParamList s_recurrent = student.recurrent_params();
    auto t_opt = make_optimizer(cfg);
    auto s_opt = make_optimizer(cfg);
    std::string hash = config_hash(cfg);

    TrainResult res;
    res.param_count = student.param_count();
    res.teacher_param_count = teacher.param_count();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        real lr = lr_schedule(epoch, cfg.init_lr, cfg.lr_decay_factor, cfg.lr_decay_every);
        auto order = shuffled_indices(static_cast<int64_t>(data.train.size()),
                                      Rng(cfg.seed).fork(1000 + epoch));
        double s_loss_sum = 0, t_loss_sum = 0;
        for (const auto& idxs : batches_of(order, cfg.batch_size)) {
            Tensor x = images_to_tensor(data.train, idxs);
            auto labels = batch_labels(head, data.train, idxs);

            CrnnForward t_fwd = teacher.forward(x);
            Tensor t_ctc = multirow_ctc_loss(t_fwd.logits, labels);
            TeacherSnapshot snap = snapshot_teacher(t_fwd, hint_blocks);

            CrnnForward s_fwd = student.forward(x);
            Tensor skd = skd_loss(s_fwd.logits, snap.logits, labels, cfg.kd);
            std::vector<std::pair<Tensor, Tensor>> pairs;
            for (size_t i = 0; i < hint_blocks.size(); ++i)
                pairs.push_back({s_fwd.block_acts[hint_blocks[i]], snap.hints[i]});
            Tensor mse = hint_loss(pairs, regressors);
            Tensor lstm = lstm_state_loss(s_fwd.rnn.last_h_cat(), s_fwd.rnn.last_c_cat(),
                                          snap.last_h, snap.last_c);
            Tensor kd = kd_total(skd, mse, lstm, cfg.kd);
            // the combined objective: the teacher only sees its own CTC term,
            // the student only the (teacher-detached) KD term
            Tensor total = train_objective(t_ctc, kd);
            zero_grads(t_params);
            zero_grads(s_params);
            backward(total);
            clip_grad_norm(t_recurrent, cfg.clip_norm);
            clip_grad_norm(s_recurrent, cfg.clip_norm);

            t_opt->step(t_params, lr);
            s_opt->step(s_params, lr);
            t_loss_sum += t_ctc.item() * static_cast<double>(idxs.size());
            s_loss_sum += kd.item() * static_cast<double>(idxs.size());
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = s_loss_sum / static_cast<double>(data.train.size());
        log.teacher_loss = t_loss_sum / static_cast<double>(data.train.size());
        res.eval = evaluate(student, data.test, cfg.batch_size, cfg.eval_max_examples);
        log.clp = res.eval.clp;
        log.ilp = res.eval.ilp;
        log.teacher_clp =
            evaluate(teacher, data.test, cfg.batch_size, cfg.eval_max_examples).clp;
        res.log.push_back(log);
        if ((epoch + 1) % cfg.lr_decay_every == 0 && epoch + 1 < cfg.epochs) {
            save_crnn(out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".crnl", student,
                      epoch + 1, hash);
            save_crnn(out_dir + "/teacher_epoch" + std::to_string(epoch + 1) + ".crnl", teacher,
                      epoch + 1, hash);
        }
    }
    res.checkpoint = out_dir + "/model.crnl";
    res.teacher_checkpoint = out_dir + "/teacher.crnl";
    save_crnn(res.checkpoint, student, cfg.epochs, hash);
    save_crnn(res.teacher_checkpoint, teacher, cfg.epochs, hash);
    write_loss_csv(out_dir + "/loss.csv", res.log);
    write_run_plot(out_dir + "/loss.svg", method_to_string(cfg.method), res.log);
    write_eval_csv(out_dir + "/eval.csv", res.eval.records);
    return res;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir) {
    check_regime(cfg.method, data.spec);
    fs::create_directories(out_dir);
    if (method_is_autoencoder(cfg.method))
        return train_autoencoder(cfg, data, out_dir, cfg.method == Method::line_ddecae);
    if (method_is_kd(cfg.method)) return train_kd(cfg, data, out_dir, head_for_method(cfg.method));
    if (method_is_pipeline(cfg.method)) {
        if (cfg.ae_checkpoint.empty())
            throw ConfigError("method " + method_to_string(cfg.method) +
                              " needs ae_checkpoint (a trained autoencoder)");
        bool line_model = false;
        Autoencoder ae = load_autoencoder(cfg.ae_checkpoint, &line_model);
        bool want_line = cfg.method == Method::line_ddecae_crnn;
        if (line_model != want_line)
            throw ConfigError("method " + method_to_string(cfg.method) + " needs a " +
                              (want_line ? "line" : "text") +
                              "-target autoencoder, checkpoint was trained on the other target");
        Dataset cleaned = denoise_dataset(ae, line_model, data, cfg.batch_size);
        return train_recognizer(cfg, cleaned, out_dir, HeadKind::stretch);
    }
    return train_recognizer(cfg, data, out_dir, head_for_method(cfg.method));
}

}  // namespace crnl
