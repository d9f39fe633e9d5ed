#include "crnl/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace crnl {

int Glyph::ink_pixels() const { return std::popcount(bits); }

uint64_t raw_glyph_bits(uint64_t uid) {
    uint64_t bits = 0;
    for (uint64_t j = 0; j < 64; ++j) bits |= (splitmix64(uid * 64 + j) >> 63) << j;
    return bits;
}

Vocab make_vocab(int64_t size) {
    if (size < 1) throw ConfigError("vocab: size must be positive");
    Vocab v;
    v.uid_by_class.push_back(0);  // blank placeholder
    std::set<uint64_t> seen;
    for (int64_t id = 1; id <= size; ++id) {
        uint64_t uid = static_cast<uint64_t>(id);
        for (;;) {
            uint64_t bits = raw_glyph_bits(uid);
            if (std::popcount(bits) >= 12 && !seen.count(bits)) {
                seen.insert(bits);
                break;
            }
            uid += 10007;
        }
        v.uid_by_class.push_back(uid);
    }
    return v;
}

Glyph glyph_bitmap(int id, const Vocab& vocab) {
    if (id == 0) throw ContractError("glyph_bitmap: id 0 is the blank, it has no bitmap");
    if (id < 0 || id > vocab.size())
        throw ContractError("glyph_bitmap: id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(vocab.size()));
    Glyph g;
    g.id = id;
    g.bits = raw_glyph_bits(vocab.uid_by_class[id]);
    return g;
}

// --- rendering ---------------------------------------------------------------

namespace {

struct Canvas {
    int64_t w = 0, h = 0;
    std::vector<uint8_t>* px = nullptr;

    void set(int64_t y, int64_t x) {
        if (y >= 0 && y < h && x >= 0 && x < w) (*px)[y * w + x] = 255;
    }
};

// Blit one text row into [y0,y0+region_h) of the canvas.
void blit_row(Canvas canvas, int64_t y0, int64_t region_h, const LabelSeq& text,
              const Vocab& vocab, Rng& rng) {
    int64_t n = text.size();
    if (n == 0) return;
    constexpr int64_t kGap = 2, kMargin = 2;
    int64_t by_height = std::max<int64_t>(1, (region_h * 7) / (10 * 8));
    int64_t avail = canvas.w - 2 * kMargin - (n - 1) * kGap;
    int64_t by_width = avail / (8 * n);
    int64_t s = std::min(by_height, by_width);
    if (s < 1)
        throw LayoutError("render_row: " + std::to_string(n) + " glyphs do not fit in width " +
                          std::to_string(canvas.w));
    int64_t total_w = n * 8 * s + (n - 1) * kGap;
    int64_t jx = static_cast<int64_t>(rng.next_below(3)) - 1;
    int64_t jy = static_cast<int64_t>(rng.next_below(3)) - 1;
    int64_t x = (canvas.w - total_w) / 2 + jx;
    int64_t y = y0 + (region_h - 8 * s) / 2 + jy;
    for (int64_t i = 0; i < n; ++i) {
        Glyph g = glyph_bitmap(text.classes[i], vocab);
        for (int gy = 0; gy < 8; ++gy)
            for (int gx = 0; gx < 8; ++gx) {
                if (!g.pixel(gy, gx)) continue;
                for (int64_t dy = 0; dy < s; ++dy)
                    for (int64_t dx = 0; dx < s; ++dx)
                        canvas.set(y + gy * s + dy, x + i * (8 * s + kGap) + gx * s + dx);
            }
    }
}

}  // namespace

std::vector<uint8_t> render_row(const LabelSeq& text, const Vocab& vocab, int64_t width,
                                int64_t height, uint64_t rng_seed) {
    std::vector<uint8_t> px(width * height, 0);
    Rng rng(rng_seed);
    blit_row({width, height, &px}, 0, height, text, vocab, rng);
    return px;
}

ImageSample render_multirow(const std::vector<LabelSeq>& rows, bool boxed, int64_t size,
                            const Vocab& vocab, Rng& rng) {
    int64_t n_rows = static_cast<int64_t>(rows.size());
    if (n_rows < 1) throw LayoutError("render_multirow: need at least one row");
    if (size / n_rows < 8) throw LayoutError("render_multirow: rows do not fit vertically");

    ImageSample s;
    s.height = s.width = size;
    s.text_layer.assign(size * size, 0);
    s.line_layer.assign(size * size, 0);
    Canvas text{size, size, &s.text_layer};

    for (int64_t r = 0; r < n_rows; ++r) {
        int64_t y0 = r * size / n_rows;
        int64_t y1 = (r + 1) * size / n_rows;
        blit_row(text, y0, y1 - y0, rows[r], vocab, rng);
    }

    if (boxed) {
        Canvas lines{size, size, &s.line_layer};
        for (int64_t r = 0; r <= n_rows; ++r) {
            int64_t y = std::min<int64_t>(size - 1, r * size / n_rows);
            for (int64_t x = 0; x < size; ++x) lines.set(y, x);
        }
        constexpr int64_t kCols = 6, kMargin = 1;
        for (int64_t c = 0; c <= kCols; ++c) {
            int64_t x = kMargin + c * (size - 1 - 2 * kMargin) / kCols;
            for (int64_t y = 0; y < size; ++y) lines.set(y, x);
        }
    }

    s.image.resize(size * size);
    for (int64_t i = 0; i < size * size; ++i)
        s.image[i] = std::max(s.text_layer[i], s.line_layer[i]);
    s.labels = rows;
    return s;
}

// --- dataset -----------------------------------------------------------------

DatasetSpec regime_spec(const std::string& name, int scale) {
    if (scale < 1) throw ConfigError("regime: scale must be >= 1");
    DatasetSpec s;
    s.name = name;
    if (name == "S_data1") {
        s.n_examples = 5000;
    } else if (name == "S_data2") {
        s.n_examples = 10000;
    } else if (name == "M_data1") {
        s.n_examples = 30000;
        s.rows = 7;
        s.canvas_h = s.canvas_w = 224;
        s.chars_min = 4;
        s.chars_max = 6;
    } else if (name == "M_data2") {
        s.n_examples = 30000;
        s.rows = 10;
        s.boxed = true;
        s.canvas_h = s.canvas_w = 224;
        s.chars_min = 3;
        s.chars_max = 5;
    } else {
        throw ConfigError("unknown regime '" + name +
                          "' (expected S_data1, S_data2, M_data1 or M_data2)");
    }
    s.n_examples = std::max<int64_t>(5, s.n_examples / scale);
    return s;
}

Dataset build_dataset(const DatasetSpec& spec, uint64_t master_seed) {
    if (spec.chars_min < 1 || spec.chars_max < spec.chars_min)
        throw ConfigError("dataset: bad chars range");
    Dataset ds;
    ds.spec = spec;
    ds.master_seed = master_seed;
    ds.vocab = make_vocab(spec.vocab_size);

    uint64_t stream_base = splitmix64(master_seed) ^ fnv1a64(spec.name);
    Rng base(stream_base);
    std::set<std::vector<int>> seen_rows;  // no row string leaks across the split

    for (int64_t i = 0; i < spec.n_examples; ++i) {
        Rng rng = base.fork(static_cast<uint64_t>(i));
        std::vector<LabelSeq> labels(spec.rows);
        int prev = 0;  // no adjacent repeats across the whole image stream
        for (int r = 0; r < spec.rows; ++r) {
            for (int attempt = 0;; ++attempt) {
                if (attempt > 10000)
                    throw LayoutError("dataset: cannot draw a fresh row string; vocab too small");
                LabelSeq row;
                int64_t len =
                    spec.chars_min + static_cast<int64_t>(rng.next_below(
                                         static_cast<uint64_t>(spec.chars_max - spec.chars_min + 1)));
                int p = prev;
                for (int64_t j = 0; j < len; ++j) {
                    int c;
                    do {
                        c = 1 + static_cast<int>(rng.next_below(ds.vocab.size()));
                    } while (c == p);
                    row.classes.push_back(c);
                    p = c;
                }
                if (seen_rows.count(row.classes)) continue;
                seen_rows.insert(row.classes);
                labels[r] = std::move(row);
                prev = p;
                break;
            }
        }

        ImageSample sample;
        if (spec.rows == 1 && !spec.boxed) {
            sample.height = spec.canvas_h;
            sample.width = spec.canvas_w;
            sample.image.assign(sample.height * sample.width, 0);
            Canvas canvas{sample.width, sample.height, &sample.image};
            blit_row(canvas, 0, sample.height, labels[0], ds.vocab, rng);
            sample.labels = labels;
        } else {
            if (spec.canvas_h != spec.canvas_w)
                throw ConfigError("dataset: multi-row canvas must be square");
            sample = render_multirow(labels, spec.boxed, spec.canvas_h, ds.vocab, rng);
        }
        sample.id = i;
        int64_t n_train = static_cast<int64_t>(spec.n_examples * spec.split);
        (i < n_train ? ds.train : ds.test).push_back(std::move(sample));
    }
    return ds;
}

// --- PGM + manifest IO ---------------------------------------------------------

void write_pgm(const std::string& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& pixels) {
    if (static_cast<int64_t>(pixels.size()) != width * height)
        throw IoError("write_pgm: pixel buffer does not match " + std::to_string(width) + "x" +
                      std::to_string(height));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pgm: cannot open " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    if (!f) throw IoError("write_pgm: short write to " + path);
}

std::vector<uint8_t> read_pgm(const std::string& path, int64_t& width, int64_t& height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw IoError("read_pgm: " + path + " is not binary PGM");
    int64_t maxval = 0;
    f >> width >> height >> maxval;
    if (!f || width <= 0 || height <= 0 || maxval != 255)
        throw IoError("read_pgm: bad header in " + path);
    f.get();  // single whitespace after maxval
    std::vector<uint8_t> px(width * height);
    f.read(reinterpret_cast<char*>(px.data()), px.size());
    if (!f) throw IoError("read_pgm: truncated data in " + path);
    return px;
}

namespace {

std::string img_name(int64_t id, const char* suffix) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld%s.pgm", static_cast<long long>(id), suffix);
    return std::string("imgs/") + buf;
}

json sample_to_json(const ImageSample& s, bool boxed, const std::string& split) {
    json j;
    j["id"] = s.id;
    j["split"] = split;
    j["image"] = img_name(s.id, "");
    if (boxed) {
        j["text_layer"] = img_name(s.id, "_text");
        j["line_layer"] = img_name(s.id, "_line");
    }
    json labels = json::array();
    for (const auto& row : s.labels) labels.push_back(row.classes);
    j["labels"] = std::move(labels);
    return j;
}

void write_sample_images(const ImageSample& s, bool boxed, const fs::path& dir) {
    write_pgm((dir / img_name(s.id, "")).string(), s.width, s.height, s.image);
    if (boxed) {
        write_pgm((dir / img_name(s.id, "_text")).string(), s.width, s.height, s.text_layer);
        write_pgm((dir / img_name(s.id, "_line")).string(), s.width, s.height, s.line_layer);
    }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "imgs");
    json manifest;
    manifest["regime"] = ds.spec.name;
    manifest["n_examples"] = ds.spec.n_examples;
    manifest["rows"] = ds.spec.rows;
    manifest["boxed"] = ds.spec.boxed;
    manifest["split"] = ds.spec.split;
    manifest["canvas"] = {ds.spec.canvas_h, ds.spec.canvas_w};
    manifest["chars"] = {ds.spec.chars_min, ds.spec.chars_max};
    manifest["vocab_size"] = ds.spec.vocab_size;
    manifest["master_seed"] = ds.master_seed;
    manifest["vocab"] = ds.vocab.uid_by_class;
    json samples = json::array();
    for (const auto& s : ds.train) {
        samples.push_back(sample_to_json(s, ds.spec.boxed, "train"));
        write_sample_images(s, ds.spec.boxed, dir);
    }
    for (const auto& s : ds.test) {
        samples.push_back(sample_to_json(s, ds.spec.boxed, "test"));
        write_sample_images(s, ds.spec.boxed, dir);
    }
    manifest["samples"] = std::move(samples);
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("save_dataset: cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("load_dataset: no manifest.json in " + dir);
    json manifest = json::parse(f);

    Dataset ds;
    ds.spec.name = manifest.at("regime").get<std::string>();
    ds.spec.n_examples = manifest.at("n_examples").get<int64_t>();
    ds.spec.rows = manifest.at("rows").get<int>();
    ds.spec.boxed = manifest.at("boxed").get<bool>();
    ds.spec.split = manifest.at("split").get<double>();
    ds.spec.canvas_h = manifest.at("canvas")[0].get<int64_t>();
    ds.spec.canvas_w = manifest.at("canvas")[1].get<int64_t>();
    ds.spec.chars_min = manifest.at("chars")[0].get<int>();
    ds.spec.chars_max = manifest.at("chars")[1].get<int>();
    ds.spec.vocab_size = manifest.at("vocab_size").get<int64_t>();
    ds.master_seed = manifest.at("master_seed").get<uint64_t>();
    ds.vocab.uid_by_class = manifest.at("vocab").get<std::vector<uint64_t>>();

    for (const auto& j : manifest.at("samples")) {
        ImageSample s;
        s.id = j.at("id").get<int64_t>();
        for (const auto& row : j.at("labels")) {
            LabelSeq seq;
            seq.classes = row.get<std::vector<int>>();
            s.labels.push_back(std::move(seq));
        }
        s.image = read_pgm((fs::path(dir) / j.at("image").get<std::string>()).string(), s.width,
                           s.height);
        if (j.contains("text_layer")) {
            int64_t w, h;
            s.text_layer =
                read_pgm((fs::path(dir) / j.at("text_layer").get<std::string>()).string(), w, h);
            s.line_layer =
                read_pgm((fs::path(dir) / j.at("line_layer").get<std::string>()).string(), w, h);
        }
        (j.at("split").get<std::string>() == "train" ? ds.train : ds.test)
            .push_back(std::move(s));
    }
    return ds;
}

}  // namespace crnl
