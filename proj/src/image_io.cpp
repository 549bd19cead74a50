#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdio>

#include "mba/common.hpp"
#include "mba/data.hpp"

// The only OpenCV touchpoint in the library: file decoding. Everything
// after decode (resize, crop, flip, jitter, normalize) is our own code so
// the augmentation math stays reproducible and testable.

namespace mba {

RawImage decode_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot decode image '" + path + "'");
    if (m.depth() != CV_8U) throw DataError("image '" + path + "' is not 8-bit");
    int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4)
        throw DataError("image '" + path + "' has unsupported channel count " + std::to_string(ch));
    if (ch == 1) std::fprintf(stderr, "warning: grayscale image '%s' expanded to RGB\n", path.c_str());

    RawImage out;
    out.height = m.rows;
    out.width = m.cols;
    out.rgb.resize(std::size_t(m.rows) * m.cols * 3);
    const float inv = 1.0f / 255.0f;
    for (int y = 0; y < m.rows; ++y) {
        const unsigned char* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < m.cols; ++x) {
            if (ch == 1) {
                float v = row[x] * inv;
                out.at(y, x, 0) = v;
                out.at(y, x, 1) = v;
                out.at(y, x, 2) = v;
            } else {  // OpenCV stores BGR(A); alpha is ignored
                out.at(y, x, 0) = row[x * ch + 2] * inv;
                out.at(y, x, 1) = row[x * ch + 1] * inv;
                out.at(y, x, 2) = row[x * ch + 0] * inv;
            }
        }
    }
    return out;
}

RawImage resize_bilinear(const RawImage& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw DataError("resize target must be positive");
    if (img.height == out_h && img.width == out_w) return img;
    RawImage out;
    out.height = out_h;
    out.width = out_w;
    out.rgb.resize(std::size_t(out_h) * out_w * 3);
    const float sy = float(img.height) / float(out_h);
    const float sx = float(img.width) / float(out_w);
    for (int y = 0; y < out_h; ++y) {
        float fy = (float(y) + 0.5f) * sy - 0.5f;
        int y0 = int(std::floor(fy));
        float wy = fy - float(y0);
        int y0c = std::min(std::max(y0, 0), img.height - 1);
        int y1c = std::min(y0 + 1, img.height - 1);
        if (y0 < 0) wy = 0.f;
        for (int x = 0; x < out_w; ++x) {
            float fx = (float(x) + 0.5f) * sx - 0.5f;
            int x0 = int(std::floor(fx));
            float wx = fx - float(x0);
            int x0c = std::min(std::max(x0, 0), img.width - 1);
            int x1c = std::min(x0 + 1, img.width - 1);
            if (x0 < 0) wx = 0.f;
            for (int c = 0; c < 3; ++c) {
                float top = img.at(y0c, x0c, c) * (1.f - wx) + img.at(y0c, x1c, c) * wx;
                float bot = img.at(y1c, x0c, c) * (1.f - wx) + img.at(y1c, x1c, c) * wx;
                out.at(y, x, c) = top * (1.f - wy) + bot * wy;
            }
        }
    }
    return out;
}

RawImage flip_horizontal(const RawImage& img) {
    RawImage out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

RawImage crop(const RawImage& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
        throw DataError("crop window out of bounds");
    RawImage out;
    out.height = h;
    out.width = w;
    out.rgb.resize(std::size_t(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace mba
