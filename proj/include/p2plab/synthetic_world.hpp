#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2plab/image.hpp"
#include "p2plab/rng.hpp"

namespace p2plab {

enum class ShapeKind : uint8_t { circle, square, triangle };
enum class FgColor : uint8_t { red, green, blue, yellow, purple };
enum class BgColor : uint8_t { white, gray, cyan };

struct Rgb {
    float r, g, b;
};

Rgb palette(FgColor c);
Rgb palette(BgColor c);
const char* name_of(ShapeKind s);
const char* name_of(FgColor c);
const char* name_of(BgColor c);
ShapeKind shape_from_name(const std::string& s);
FgColor fg_from_name(const std::string& s);
BgColor bg_from_name(const std::string& s);

// One captioned scene: a single solid shape on a solid background.
// size_px is the circle radius / square half-side / triangle half-base.
struct SceneSpec {
    ShapeKind shape = ShapeKind::circle;
    FgColor fg = FgColor::red;
    BgColor bg = BgColor::white;
    int cx = 16;
    int cy = 16;
    int size_px = 8;

    bool operator==(const SceneSpec& o) const {
        return shape == o.shape && fg == o.fg && bg == o.bg && cx == o.cx && cy == o.cy &&
               size_px == o.size_px;
    }
    // Throws on size < 4 or a shape that does not fit fully inside the image.
    void validate(int side) const;
};

struct GroundTruthMask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> on;  // 1 on foreground pixels

    int popcount() const;
};

struct RenderedScene {
    Image image;
    GroundTruthMask mask;
};

// Exact rasterization, no anti-aliasing: every pixel is exactly one palette color.
RenderedScene render_scene(const SceneSpec& spec, int side);

// "a {fg} {shape} on a {bg} background" — always 7 words.
std::string caption_of(const SceneSpec& spec);

struct SceneEstimate {
    bool found = false;  // false: no foreground component of at least 10 px
    SceneSpec spec;
    float confidence = 0.0f;  // 1.0 on clean renders
};

// Nearest-palette classifier: border-ring majority -> background, largest
// connected non-background component -> shape via bounding-box fill ratio.
SceneEstimate classify_scene(const Image& img);

struct DatasetRecord {
    std::string file;
    std::string caption;
    SceneSpec spec;
};

struct DatasetManifest {
    std::vector<DatasetRecord> records;
};

SceneSpec random_scene(RandomStream& rng, int side);

// Writes n PPM scenes plus manifest.tsv into out_dir. Byte-identical per seed.
DatasetManifest build_dataset(int n, uint64_t seed, const std::string& out_dir, int side = 32);
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

}  // namespace p2plab
