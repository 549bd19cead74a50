#include <cmath>

#include "mba/common.hpp"
#include "mba/data.hpp"

namespace mba {

// Identity appearance: base color, two colored blobs and an oriented stripe
// pattern, all drawn from an identity-keyed stream. Per-image jitter moves
// the blobs a little and adds noise, so images of one identity cluster
// tightly while identities stay far apart.

RawImage synthetic_image(const SyntheticSpec& spec, int identity, int index) {
    if (identity < 0 || identity >= spec.num_identities)
        throw DataError("synthetic identity " + std::to_string(identity) + " out of range");
    if (index < 0 || index >= spec.images_per_identity)
        throw DataError("synthetic image index " + std::to_string(index) + " out of range");

    Rng id_rng(mix64(spec.seed, 0x1d5eedull, uint64_t(identity)));
    float base[3], blob_color[2][3];
    for (auto& v : base) v = float(0.15 + 0.7 * id_rng.uniform());
    struct Blob {
        float cx, cy, r;
    } blobs[2];
    for (int b = 0; b < 2; ++b) {
        blobs[b] = {float(0.2 + 0.6 * id_rng.uniform()), float(0.2 + 0.6 * id_rng.uniform()),
                    float(0.10 + 0.15 * id_rng.uniform())};
        for (int c = 0; c < 3; ++c) blob_color[b][c] = float(id_rng.uniform());
    }
    float freq = float(4.0 + 10.0 * id_rng.uniform());
    float angle = float(3.14159265 * id_rng.uniform());
    float phase = float(6.2831853 * id_rng.uniform());
    float stripe_amp = float(0.08 + 0.10 * id_rng.uniform());

    Rng img_rng(mix64(spec.seed, uint64_t(identity) * 1000003ull + 17ull, uint64_t(index)));
    float dx[2], dy[2];
    for (int b = 0; b < 2; ++b) {
        dx[b] = float(0.05 * img_rng.normal());
        dy[b] = float(0.05 * img_rng.normal());
    }
    float gain = float(1.0 + 0.08 * img_rng.normal());
    float noise_amp = 0.02f;

    int n = spec.size;
    RawImage img;
    img.height = n;
    img.width = n;
    img.rgb.resize(std::size_t(n) * n * 3);
    float ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            float u = (float(x) + 0.5f) / float(n);
            float v = (float(y) + 0.5f) / float(n);
            float stripe = stripe_amp * std::sin(freq * (u * ca + v * sa) * 6.2831853f + phase);
            float px[3] = {base[0] + stripe, base[1] + stripe, base[2] + stripe};
            for (int b = 0; b < 2; ++b) {
                float ddx = u - (blobs[b].cx + dx[b]);
                float ddy = v - (blobs[b].cy + dy[b]);
                float w = std::exp(-(ddx * ddx + ddy * ddy) / (2.f * blobs[b].r * blobs[b].r));
                for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.f - w) + blob_color[b][c] * w;
            }
            for (int c = 0; c < 3; ++c) {
                float val = px[c] * gain + noise_amp * float(img_rng.normal());
                img.at(y, x, c) = std::min(1.f, std::max(0.f, val));
            }
        }
    }
    return img;
}

}  // namespace mba
