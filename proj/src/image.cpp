#include "p2plab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace p2plab {

uint8_t float_to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

std::vector<uint8_t> encode_ppm(const Image& img) {
    std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 3u * img.h * img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            out.push_back(float_to_byte(img.at(0, y, x)));
            out.push_back(float_to_byte(img.at(1, y, x)));
            out.push_back(float_to_byte(img.at(2, y, x)));
        }
    }
    return out;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    const auto bytes = encode_ppm(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        throw std::runtime_error("unsupported PPM header in " + path);
    f.get();  // single whitespace after maxval
    Image img(h, w);
    std::vector<uint8_t> row(3u * w);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw std::runtime_error("truncated PPM: " + path);
        for (int x = 0; x < w; ++x) {
            img.at(0, y, x) = row[3u * x + 0] / 255.0f;
            img.at(1, y, x) = row[3u * x + 1] / 255.0f;
            img.at(2, y, x) = row[3u * x + 2] / 255.0f;
        }
    }
    return img;
}

double image_mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw std::runtime_error("image_mse: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

bool image_equal(const Image& a, const Image& b) {
    return a.h == b.h && a.w == b.w &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

Image upscale_nearest(const Image& img, int factor) {
    Image out(img.h * factor, img.w * factor);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(c, y, x) = img.at(c, y / factor, x / factor);
    return out;
}

}  // namespace p2plab
