#include "p2plab/synthetic_world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace p2plab {

namespace {

constexpr std::array<Rgb, 5> kFgPalette = {{
    {0.9f, 0.1f, 0.1f},  // red
    {0.1f, 0.7f, 0.1f},  // green
    {0.1f, 0.1f, 0.9f},  // blue
    {0.9f, 0.9f, 0.1f},  // yellow
    {0.6f, 0.1f, 0.7f},  // purple
}};

constexpr std::array<Rgb, 3> kBgPalette = {{
    {1.0f, 1.0f, 1.0f},   // white
    {0.5f, 0.5f, 0.5f},   // gray
    {0.0f, 0.75f, 0.75f}, // cyan
}};

constexpr std::array<const char*, 3> kShapeNames = {"circle", "square", "triangle"};
constexpr std::array<const char*, 5> kFgNames = {"red", "green", "blue", "yellow", "purple"};
constexpr std::array<const char*, 3> kBgNames = {"white", "gray", "cyan"};

// Bounding-box fill ratios: square rasterizes to 1.0, circle to ~0.61..0.78
// depending on radius, triangle to ~0.50. Bands sit at the midpoints of the
// worst cases observed over the valid size range.
constexpr float kSquareBand = 0.87f;
constexpr float kCircleBand = 0.556f;

constexpr int kMinComponentPx = 10;

inline bool inside_shape(const SceneSpec& s, int x, int y) {
    const int dx = x - s.cx;
    const int dy = y - s.cy;
    switch (s.shape) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= s.size_px * s.size_px;
        case ShapeKind::square:
            return std::abs(dx) <= s.size_px && std::abs(dy) <= s.size_px;
        case ShapeKind::triangle: {
            // Upward triangle: apex at (cx, cy - s), base at cy + s.
            if (dy < -s.size_px || dy > s.size_px) return false;
            const float halfwidth =
                static_cast<float>(s.size_px) * (dy + s.size_px) / (2.0f * s.size_px);
            return std::abs(dx) <= halfwidth;
        }
    }
    return false;
}

inline float dist2(const Rgb& p, float r, float g, float b) {
    const float dr = p.r - r, dg = p.g - g, db = p.b - b;
    return dr * dr + dg * dg + db * db;
}

// Palette labels 0..4 = fg colors, 5..7 = bg colors.
inline Rgb label_color(int label) {
    return label < 5 ? kFgPalette[static_cast<size_t>(label)]
                     : kBgPalette[static_cast<size_t>(label - 5)];
}

int nearest_label(float r, float g, float b) {
    int best = 0;
    float best_d = dist2(label_color(0), r, g, b);
    for (int l = 1; l < 8; ++l) {
        const float d = dist2(label_color(l), r, g, b);
        if (d < best_d) {
            best_d = d;
            best = l;
        }
    }
    return best;
}

}  // namespace

Rgb palette(FgColor c) { return kFgPalette[static_cast<size_t>(c)]; }
Rgb palette(BgColor c) { return kBgPalette[static_cast<size_t>(c)]; }
const char* name_of(ShapeKind s) { return kShapeNames[static_cast<size_t>(s)]; }
const char* name_of(FgColor c) { return kFgNames[static_cast<size_t>(c)]; }
const char* name_of(BgColor c) { return kBgNames[static_cast<size_t>(c)]; }

ShapeKind shape_from_name(const std::string& s) {
    for (size_t i = 0; i < kShapeNames.size(); ++i)
        if (s == kShapeNames[i]) return static_cast<ShapeKind>(i);
    throw std::runtime_error("unknown shape name: " + s);
}

FgColor fg_from_name(const std::string& s) {
    for (size_t i = 0; i < kFgNames.size(); ++i)
        if (s == kFgNames[i]) return static_cast<FgColor>(i);
    throw std::runtime_error("unknown foreground color name: " + s);
}

BgColor bg_from_name(const std::string& s) {
    for (size_t i = 0; i < kBgNames.size(); ++i)
        if (s == kBgNames[i]) return static_cast<BgColor>(i);
    throw std::runtime_error("unknown background color name: " + s);
}

void SceneSpec::validate(int side) const {
    if (size_px < 4) throw std::runtime_error("scene spec rejected: size_px < 4");
    if (cx - size_px < 0 || cx + size_px >= side || cy - size_px < 0 || cy + size_px >= side)
        throw std::runtime_error("scene spec rejected: shape out of bounds");
}

int GroundTruthMask::popcount() const {
    int n = 0;
    for (uint8_t v : on) n += v;
    return n;
}

RenderedScene render_scene(const SceneSpec& spec, int side) {
    if (side < 16) throw std::runtime_error("render_scene: side must be at least 16");
    spec.validate(side);
    const Rgb fg = palette(spec.fg);
    const Rgb bg = palette(spec.bg);
    RenderedScene out;
    out.image = Image(side, side);
    out.mask = GroundTruthMask{side, side, std::vector<uint8_t>(static_cast<size_t>(side) * side, 0)};
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const bool on = inside_shape(spec, x, y);
            const Rgb& c = on ? fg : bg;
            out.image.at(0, y, x) = c.r;
            out.image.at(1, y, x) = c.g;
            out.image.at(2, y, x) = c.b;
            out.mask.on[static_cast<size_t>(y) * side + x] = on ? 1 : 0;
        }
    }
    return out;
}

std::string caption_of(const SceneSpec& spec) {
    std::string s = "a ";
    s += name_of(spec.fg);
    s += " ";
    s += name_of(spec.shape);
    s += " on a ";
    s += name_of(spec.bg);
    s += " background";
    return s;
}

SceneEstimate classify_scene(const Image& img) {
    const int h = img.h, w = img.w;
    std::vector<int> label(static_cast<size_t>(h) * w);
    double dist_sum = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
            const int l = nearest_label(r, g, b);
            label[static_cast<size_t>(y) * w + x] = l;
            dist_sum += std::sqrt(static_cast<double>(dist2(label_color(l), r, g, b)));
        }
    }
    const double mean_dist = dist_sum / (static_cast<double>(h) * w);
    const float confidence =
        static_cast<float>(std::clamp(1.0 - mean_dist / std::sqrt(3.0), 0.0, 1.0));

    // Background: majority label on the 1px border ring, restricted to bg labels.
    std::array<int, 8> ring_count{};
    for (int x = 0; x < w; ++x) {
        ring_count[static_cast<size_t>(label[x])]++;
        ring_count[static_cast<size_t>(label[static_cast<size_t>(h - 1) * w + x])]++;
    }
    for (int y = 1; y < h - 1; ++y) {
        ring_count[static_cast<size_t>(label[static_cast<size_t>(y) * w])]++;
        ring_count[static_cast<size_t>(label[static_cast<size_t>(y) * w + w - 1])]++;
    }
    int bg_label = 5;
    for (int l = 5; l < 8; ++l)
        if (ring_count[static_cast<size_t>(l)] > ring_count[static_cast<size_t>(bg_label)]) bg_label = l;

    // Largest 4-connected component of non-background pixels.
    std::vector<int> comp(static_cast<size_t>(h) * w, -1);
    int best_comp = -1, best_size = 0;
    std::vector<int> stack;
    int n_comp = 0;
    std::vector<std::pair<int, int>> best_pixels, cur_pixels;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t idx = static_cast<size_t>(y) * w + x;
            if (label[idx] == bg_label || comp[idx] != -1) continue;
            cur_pixels.clear();
            stack.assign(1, static_cast<int>(idx));
            comp[idx] = n_comp;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int py = p / w, px = p % w;
                cur_pixels.emplace_back(px, py);
                const int nb[4][2] = {{px - 1, py}, {px + 1, py}, {px, py - 1}, {px, py + 1}};
                for (auto& q : nb) {
                    if (q[0] < 0 || q[0] >= w || q[1] < 0 || q[1] >= h) continue;
                    const size_t qi = static_cast<size_t>(q[1]) * w + q[0];
                    if (label[qi] == bg_label || comp[qi] != -1) continue;
                    comp[qi] = n_comp;
                    stack.push_back(static_cast<int>(qi));
                }
            }
            if (static_cast<int>(cur_pixels.size()) > best_size) {
                best_size = static_cast<int>(cur_pixels.size());
                best_comp = n_comp;
                best_pixels = cur_pixels;
            }
            ++n_comp;
        }
    }
    (void)best_comp;

    SceneEstimate est;
    est.confidence = confidence;
    if (best_size < kMinComponentPx) return est;

    // Foreground color: majority fg label inside the component.
    std::array<int, 5> fg_count{};
    int x0 = w, x1 = -1, y0 = h, y1 = -1;
    for (auto& [px, py] : best_pixels) {
        const int l = label[static_cast<size_t>(py) * w + px];
        if (l < 5) fg_count[static_cast<size_t>(l)]++;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
    }
    int fg_label = -1, fg_best = 0;
    for (int l = 0; l < 5; ++l)
        if (fg_count[static_cast<size_t>(l)] > fg_best) {
            fg_best = fg_count[static_cast<size_t>(l)];
            fg_label = l;
        }
    if (fg_label < 0) return est;  // component carries no recognizable fg color

    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    const float fill = static_cast<float>(best_size) / (static_cast<float>(bw) * bh);
    ShapeKind shape = fill > kSquareBand   ? ShapeKind::square
                      : fill > kCircleBand ? ShapeKind::circle
                                           : ShapeKind::triangle;

    est.found = true;
    est.spec.shape = shape;
    est.spec.fg = static_cast<FgColor>(fg_label);
    est.spec.bg = static_cast<BgColor>(bg_label - 5);
    est.spec.cx = (x0 + x1) / 2;
    est.spec.cy = (y0 + y1) / 2;
    est.spec.size_px = ((bw - 1) + (bh - 1) + 2) / 4;  // rounded mean half-extent
    return est;
}

SceneSpec random_scene(RandomStream& rng, int side) {
    SceneSpec s;
    s.shape = static_cast<ShapeKind>(rng.next_int(3));
    s.fg = static_cast<FgColor>(rng.next_int(5));
    s.bg = static_cast<BgColor>(rng.next_int(3));
    const int max_size = std::min(10, (side - 2) / 2);
    s.size_px = 4 + rng.next_int(max_size - 4 + 1);
    s.cx = s.size_px + rng.next_int(side - 2 * s.size_px);
    s.cy = s.size_px + rng.next_int(side - 2 * s.size_px);
    return s;
}

static std::string record_line(const DatasetRecord& r) {
    std::ostringstream os;
    os << r.file << '\t' << r.caption << '\t' << name_of(r.spec.shape) << '\t'
       << name_of(r.spec.fg) << '\t' << name_of(r.spec.bg) << '\t' << r.spec.cx << '\t'
       << r.spec.cy << '\t' << r.spec.size_px;
    return os.str();
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "file\tcaption\tshape\tfg\tbg\tcx\tcy\tsize\n";
    for (const auto& r : m.records) f << record_line(r) << "\n";
    if (!f) throw std::runtime_error("short write: " + path);
}

DatasetManifest build_dataset(int n, uint64_t seed, const std::string& out_dir, int side) {
    if (n < 1) throw std::runtime_error("build_dataset: n must be >= 1");
    std::filesystem::create_directories(out_dir);
    RandomStream rng(seed, Stream::dataset);
    DatasetManifest m;
    m.records.reserve(static_cast<size_t>(n));
    char buf[32];
    for (int i = 0; i < n; ++i) {
        const SceneSpec spec = random_scene(rng, side);
        std::snprintf(buf, sizeof(buf), "scene_%05d.ppm", i);
        const auto scene = render_scene(spec, side);
        write_ppm(scene.image, out_dir + "/" + buf);
        m.records.push_back({buf, caption_of(spec), spec});
    }
    write_manifest(m, out_dir + "/manifest.tsv");
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    DatasetManifest m;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        DatasetRecord r;
        std::string shape, fg, bg, cx, cy, size;
        if (!std::getline(is, r.file, '\t') || !std::getline(is, r.caption, '\t') ||
            !std::getline(is, shape, '\t') || !std::getline(is, fg, '\t') ||
            !std::getline(is, bg, '\t') || !std::getline(is, cx, '\t') ||
            !std::getline(is, cy, '\t') || !std::getline(is, size, '\t'))
            throw std::runtime_error("malformed manifest line: " + line);
        r.spec.shape = shape_from_name(shape);
        r.spec.fg = fg_from_name(fg);
        r.spec.bg = bg_from_name(bg);
        r.spec.cx = std::stoi(cx);
        r.spec.cy = std::stoi(cy);
        r.spec.size_px = std::stoi(size);
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace p2plab
