// Command-line front end: dataset generation, training, evaluation,
// denoising, distillation, single-image inference, and loss-curve reports.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crnl/checkpoint.hpp"
#include "crnl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crnl;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    return json::parse(f);
}

DatasetSpec dataset_spec_from(const json& cfg, const std::string& regime, int scale) {
    DatasetSpec s = regime_spec(regime, scale);
    if (cfg.contains("dataset")) {
        const auto& d = cfg.at("dataset");
        if (d.contains("n_examples")) s.n_examples = d.at("n_examples").get<int64_t>();
        if (d.contains("canvas")) {
            s.canvas_h = d.at("canvas")[0].get<int64_t>();
            s.canvas_w = d.at("canvas")[1].get<int64_t>();
        }
        if (d.contains("chars")) {
            s.chars_min = d.at("chars")[0].get<int>();
            s.chars_max = d.at("chars")[1].get<int>();
        }
        if (d.contains("vocab_size")) s.vocab_size = d.at("vocab_size").get<int64_t>();
        if (d.contains("split")) s.split = d.at("split").get<double>();
    }
    return s;
}

TrainConfig train_config_from(const json& cfg_json, const std::string& method,
                              uint64_t seed, int scale, const std::string& ae_ckpt) {
    json merged = cfg_json;
    if (!method.empty()) merged["method"] = method;
    if (!merged.contains("scale")) merged["scale"] = scale;
    TrainConfig cfg = config_from_json(merged);
    if (seed != 0) cfg.seed = seed;
    if (!ae_ckpt.empty()) cfg.ae_checkpoint = ae_ckpt;
    return cfg;
}

void print_result(const TrainConfig& cfg, const TrainResult& res) {
    std::cout << "method=" << method_to_string(cfg.method) << " epochs=" << cfg.epochs
              << " params=" << res.param_count;
    if (res.teacher_param_count) std::cout << " teacher_params=" << res.teacher_param_count;
    std::cout << "\n";
    if (method_is_autoencoder(cfg.method)) {
        std::cout << "final held-out mse: " << res.final_test_mse << "\n";
    } else {
        std::cout << "final test clp=" << res.eval.clp << " ilp=" << res.eval.ilp
                  << " edit_rate=" << res.eval.edit_rate << "\n";
    }
    std::cout << "checkpoint: " << res.checkpoint << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crnl: sequence-recognition laboratory (CRNN heads, box-line removal, "
                 "online distillation)"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, regime = "S_data1", method, ckpt, image_path;
    std::string ae_ckpt;
    std::vector<std::string> csvs;
    uint64_t seed = 0;
    int scale = 1;
    int64_t max_examples = 0;

    auto add_shared = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--scale", scale, "desk-scale divisor (counts, epochs; halves widths)");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_shared(gen);
    gen->add_option("--regime", regime, "S_data1 | S_data2 | M_data1 | M_data2");

    auto* tr = app.add_subcommand("train", "train one experiment family");
    add_shared(tr);
    tr->add_option("--method", method, "crnn|cap|stretch|attention|ddecae|line_ddecae|"
                                       "ddecae_crnn|line_ddecae_crnn|kd_single|kd_multi");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--ae-ckpt", ae_ckpt, "autoencoder checkpoint for pipeline methods");

    auto* ev = app.add_subcommand("eval", "evaluate a recognizer checkpoint");
    add_shared(ev);
    ev->add_option("--ckpt", ckpt, "model checkpoint")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--max", max_examples, "cap on evaluated examples");

    auto* dn = app.add_subcommand("denoise", "run an autoencoder over a dataset");
    add_shared(dn);
    dn->add_option("--ckpt", ckpt, "autoencoder checkpoint")->required();
    dn->add_option("--data", data_dir, "dataset directory")->required();

    auto* di = app.add_subcommand("distill", "online knowledge distillation (teacher + student)");
    add_shared(di);
    di->add_option("--method", method, "kd_single | kd_multi");
    di->add_option("--data", data_dir, "dataset directory")->required();

    auto* inf = app.add_subcommand("infer", "decode one PGM image");
    add_shared(inf);
    inf->add_option("--ckpt", ckpt, "model checkpoint")->required();
    inf->add_option("--image", image_path, "P5 PGM image")->required();

    auto* rep = app.add_subcommand("report", "plot loss curves from loss.csv files");
    add_shared(rep);
    rep->add_option("--csv", csvs, "loss.csv paths (repeatable)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg_json = load_config(config_path);

        if (gen->parsed()) {
            if (out_dir.empty()) throw ConfigError("gen-data: --out is required");
            if (cfg_json.contains("regime") && regime == "S_data1")
                regime = cfg_json.at("regime").get<std::string>();
            DatasetSpec spec = dataset_spec_from(cfg_json, regime, scale);
            Dataset ds = build_dataset(spec, seed);
            save_dataset(ds, out_dir);
            std::cout << "regime=" << spec.name << " train=" << ds.train.size()
                      << " test=" << ds.test.size() << " rows=" << spec.rows
                      << " boxed=" << (spec.boxed ? 1 : 0) << " vocab=" << spec.vocab_size
                      << " -> " << out_dir << "\n";
        } else if (tr->parsed() || di->parsed()) {
            if (out_dir.empty()) throw ConfigError("train: --out is required");
            TrainConfig cfg = train_config_from(cfg_json, method, seed, scale, ae_ckpt);
            if (di->parsed() && !method_is_kd(cfg.method))
                throw ConfigError("distill: method must be kd_single or kd_multi");
            Dataset ds = load_dataset(data_dir);
            TrainResult res = train(cfg, ds, out_dir);
            print_result(cfg, res);
        } else if (ev->parsed()) {
            CrnnModel model = load_crnn(ckpt);
            Dataset ds = load_dataset(data_dir);
            EvalResult res = evaluate(model, ds.test, 16, max_examples);
            std::cout << "clp=" << res.clp << " ilp=" << res.ilp
                      << " edit_rate=" << res.edit_rate << " examples=" << res.records.size()
                      << "\n";
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_eval_csv(out_dir + "/eval.csv", res.records);
                std::cout << "report: " << out_dir << "/eval.csv\n";
            }
        } else if (dn->parsed()) {
            if (out_dir.empty()) throw ConfigError("denoise: --out is required");
            bool line_model = false;
            Autoencoder ae = load_autoencoder(ckpt, &line_model);
            Dataset ds = load_dataset(data_dir);
            Dataset cleaned = denoise_dataset(ae, line_model, ds, 16);
            save_dataset(cleaned, out_dir);
            std::cout << "denoised " << cleaned.train.size() + cleaned.test.size()
                      << " images with the " << (line_model ? "line" : "text")
                      << " reconstructor -> " << out_dir << "\n";
        } else if (inf->parsed()) {
            CrnnModel model = load_crnn(ckpt);
            int64_t w = 0, h = 0;
            auto px = read_pgm(image_path, w, h);
            auto rows = infer_image(model, px, h, w);
            for (size_t r = 0; r < rows.size(); ++r) {
                std::cout << "row " << r << ":";
                for (int c : rows[r].classes) std::cout << " " << c;
                std::cout << "\n";
            }
        } else if (rep->parsed()) {
            if (out_dir.empty()) throw ConfigError("report: --out is required");
            fs::create_directories(out_dir);
            std::vector<PlotSeries> series;
            for (const auto& path : csvs) {
                auto log = read_loss_csv(path);
                std::string stem = fs::path(path).parent_path().filename().string();
                if (stem.empty()) stem = fs::path(path).stem().string();
                PlotSeries s{stem + " train loss", {}};
                for (const auto& e : log)
                    s.points.push_back({static_cast<double>(e.epoch), e.train_loss});
                series.push_back(std::move(s));
                double last_clp = -1;
                for (const auto& e : log)
                    if (e.clp) last_clp = *e.clp;
                std::cout << path << ": epochs=" << log.size()
                          << " final_train_loss=" << (log.empty() ? 0.0 : log.back().train_loss);
                if (last_clp >= 0) std::cout << " final_clp=" << last_clp;
                std::cout << "\n";
            }
            write_svg_plot(out_dir + "/report.svg", "training loss", series);
            std::cout << "plot: " << out_dir << "/report.svg\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
