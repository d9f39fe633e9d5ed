#pragma once

// Deterministic synthetic corpus generator. Glyphs are procedural 8x8
// binary masks derived from splitmix64, so the whole corpus regenerates
// bit-exactly from (master_seed, regime) on any platform.

#include <cstdint>
#include <string>
#include <vector>

#include "crnl/ctc.hpp"

namespace crnl {

struct Glyph {
    int id = 0;          // class index (1-based; 0 is the CTC blank)
    uint64_t bits = 0;   // 8x8 mask, bit j = pixel (j/8, j%8)

    bool pixel(int y, int x) const { return (bits >> (y * 8 + x)) & 1; }
    int ink_pixels() const;
};

// Bijection between dense class indices and the glyph uids that generate
// their bitmaps. Index 0 is reserved for the blank.
struct Vocab {
    std::vector<uint64_t> uid_by_class;  // [0]=0 placeholder, then size entries

    int64_t size() const { return static_cast<int64_t>(uid_by_class.size()) - 1; }
    int64_t num_classes() const { return size() + 1; }
};

// bit j = msb of splitmix64(uid*64 + j)
uint64_t raw_glyph_bits(uint64_t uid);

// Builds classes 1..size; a uid whose mask has fewer than 12 ink pixels or
// collides with an earlier glyph is regenerated at uid+10007 until clean.
Vocab make_vocab(int64_t size);

// id must be in [1, vocab.size()]; 0 (blank) is a contract error.
Glyph glyph_bitmap(int id, const Vocab& vocab);

struct DatasetSpec {
    std::string name = "S_data1";
    int64_t n_examples = 5000;
    int rows = 1;
    bool boxed = false;
    double split = 0.8;  // leading train fraction
    int64_t canvas_h = 64, canvas_w = 128;
    int chars_min = 4, chars_max = 8;
    int64_t vocab_size = 64;
};

// Table-1 regimes; scale divides the example count (desk profile).
DatasetSpec regime_spec(const std::string& name, int scale = 1);

struct ImageSample {
    int64_t id = 0;
    int64_t height = 0, width = 0;
    std::vector<uint8_t> image;       // composed pixels, ink 255
    std::vector<uint8_t> text_layer;  // multi-row regimes
    std::vector<uint8_t> line_layer;  // zeros unless boxed
    std::vector<LabelSeq> labels;     // one per row
};

struct Dataset {
    DatasetSpec spec;
    uint64_t master_seed = 0;
    Vocab vocab;
    std::vector<ImageSample> train, test;
};

// glyphs blitted left to right, 2px gaps, vertically centered, integer
// scale filling ~70% of the height, +-1px jitter from the seeded stream
std::vector<uint8_t> render_row(const LabelSeq& text, const Vocab& vocab, int64_t width,
                                int64_t height, uint64_t rng_seed);

// rows stacked with uniform spacing; boxed adds the excel-like grid and
// returns the separate text and line layers (image == clip(text+line))
ImageSample render_multirow(const std::vector<LabelSeq>& rows, bool boxed, int64_t size,
                            const Vocab& vocab, Rng& rng);

Dataset build_dataset(const DatasetSpec& spec, uint64_t master_seed);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// binary P5, maxval 255
void write_pgm(const std::string& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_pgm(const std::string& path, int64_t& width, int64_t& height);

}  // namespace crnl
