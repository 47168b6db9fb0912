#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace p2plab {

// Unit-range RGB image stored planar (channel, row, col).
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> data;  // 3*h*w

    Image() = default;
    Image(int height, int width) : h(height), w(width), data(3u * height * width, 0.0f) {}

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * h + y) * w + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * h + y) * w + x]; }
};

// Binary P6, 8-bit. Writes are deterministic byte-for-byte.
std::vector<uint8_t> encode_ppm(const Image& img);
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

uint8_t float_to_byte(float v);

double image_mse(const Image& a, const Image& b);
bool image_equal(const Image& a, const Image& b);  // bitwise

Image upscale_nearest(const Image& img, int factor);

}  // namespace p2plab
