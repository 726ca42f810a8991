#include "densefix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace densefix {

namespace {

std::array<double, 9> mat3_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[static_cast<std::size_t>(3 * i + k)] * b[static_cast<std::size_t>(3 * k + j)];
            r[static_cast<std::size_t>(3 * i + j)] = s;
        }
    return r;
}

GeomTransform make_same_frame(const GeomTransform& base, std::array<double, 9> m) {
    GeomTransform g = base;
    g.map = m;
    return g;
}

// Crop window (top, left) of size (h, w): output pixel -> input pixel.
GeomTransform crop_transform(int in_h, int in_w, int top, int left, int crop_h, int crop_w) {
    GeomTransform g;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_h = crop_h;
    g.out_w = crop_w;
    g.map = {1, 0, static_cast<double>(left), 0, 1, static_cast<double>(top), 0, 0, 1};
    return g;
}

GeomTransform hflip_transform(int h, int w) {
    GeomTransform g = GeomTransform::identity(h, w);
    g.map = {-1, 0, static_cast<double>(w - 1), 0, 1, 0, 0, 0, 1};
    return g;
}

GeomTransform rotate_transform(int h, int w, double radians) {
    // Forward rotation about the frame center; stored map is its inverse.
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double c = std::cos(radians), s = std::sin(radians);
    GeomTransform g = GeomTransform::identity(h, w);
    // src = C + R(-theta) (dst - C)
    g.map = {c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy, 0, 0, 1};
    return g;
}

GeomTransform translate_transform(int h, int w, double dx, double dy) {
    GeomTransform g = GeomTransform::identity(h, w);
    g.map = {1, 0, -dx, 0, 1, -dy, 0, 0, 1};
    return g;
}

GeomTransform shear_transform(int h, int w, double factor) {
    // Forward: x' = x + factor * (y - cy).
    const double cy = (h - 1) / 2.0;
    GeomTransform g = GeomTransform::identity(h, w);
    g.map = {1, -factor, factor * cy, 0, 1, 0, 0, 0, 1};
    return g;
}

double draw_signed(Rng& rng, double magnitude) { return rng.bernoulli(0.5) ? magnitude : -magnitude; }

}  // namespace

GeomTransform GeomTransform::identity(int h, int w) {
    GeomTransform g;
    g.in_h = g.out_h = h;
    g.in_w = g.out_w = w;
    return g;
}

void GeomTransform::apply(double x_out, double y_out, double& x_in, double& y_in) const {
    x_in = map[0] * x_out + map[1] * y_out + map[2];
    y_in = map[3] * x_out + map[4] * y_out + map[5];
}

GeomTransform compose(const GeomTransform& g_outer, const GeomTransform& g_inner) {
    GeomTransform g;
    g.map = mat3_mul(g_inner.map, g_outer.map);  // src = M_inner (M_outer p)
    g.in_h = g_inner.in_h;
    g.in_w = g_inner.in_w;
    g.out_h = g_outer.out_h;
    g.out_w = g_outer.out_w;
    return g;
}

GeomTransform invert(const GeomTransform& g) {
    const double a = g.map[0], b = g.map[1], tx = g.map[2];
    const double c = g.map[3], d = g.map[4], ty = g.map[5];
    const double det = a * d - b * c;
    if (std::abs(det) <= 1e-9)
        throw std::invalid_argument("invert: geometric transform is near-singular");
    const double inv = 1.0 / det;
    GeomTransform r;
    r.map = {d * inv,  -b * inv, (b * ty - d * tx) * inv,
             -c * inv, a * inv,  (c * tx - a * ty) * inv,
             0,        0,        1};
    r.in_h = g.out_h;
    r.in_w = g.out_w;
    r.out_h = g.in_h;
    r.out_w = g.in_w;
    return r;
}

bool nearly_identity(const GeomTransform& g, double tol) {
    const std::array<double, 9> id{1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (std::size_t i = 0; i < 9; ++i)
        if (std::abs(g.map[i] - id[i]) > tol) return false;
    return true;
}

AugPool default_pool(bool use_geom, bool use_color) {
    AugPool pool;
    if (use_geom)
        pool.geom = {GeomOpKind::Rotate, GeomOpKind::Translate, GeomOpKind::Shear, GeomOpKind::HFlip};
    if (use_color)
        pool.color = {PhotoKind::Brightness, PhotoKind::Contrast, PhotoKind::GaussianNoise};
    return pool;
}

AugRecord sample_weak(Rng& rng, int in_h, int in_w, int crop_h, int crop_w, double flip_prob) {
    if (crop_h > in_h || crop_w > in_w)
        throw std::invalid_argument("sample_weak: crop larger than input");
    AugRecord rec;
    rec.crop_top = rng.uniform_int(0, in_h - crop_h);
    rec.crop_left = rng.uniform_int(0, in_w - crop_w);
    rec.geometric = crop_transform(in_h, in_w, rec.crop_top, rec.crop_left, crop_h, crop_w);
    rec.flipped = rng.bernoulli(flip_prob);
    if (rec.flipped)
        rec.geometric = compose(hflip_transform(crop_h, crop_w), rec.geometric);
    return rec;
}

double crop_overlap(int top_a, int left_a, int top_b, int left_b, int crop_h, int crop_w) {
    const int dy = std::max(0, std::min(top_a + crop_h, top_b + crop_h) - std::max(top_a, top_b));
    const int dx = std::max(0, std::min(left_a + crop_w, left_b + crop_w) - std::max(left_a, left_b));
    return static_cast<double>(dy) * dx / (static_cast<double>(crop_h) * crop_w);
}

AugRecord sample_strong(Rng& rng, int in_h, int in_w, int crop_h, int crop_w,
                        const StrongAugConfig& cfg, const AugRecord& weak) {
    if (crop_h > in_h || crop_w > in_w)
        throw std::invalid_argument("sample_strong: crop larger than input");
    if (cfg.pool.size() == 0) throw std::invalid_argument("sample_strong: empty op pool");

    AugRecord rec;
    switch (cfg.crop_relation) {
        case CropRelation::Same:
            rec.crop_top = weak.crop_top;
            rec.crop_left = weak.crop_left;
            break;
        case CropRelation::Any:
            rec.crop_top = rng.uniform_int(0, in_h - crop_h);
            rec.crop_left = rng.uniform_int(0, in_w - crop_w);
            break;
        case CropRelation::MinOverlap: {
            bool found = false;
            for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
                rec.crop_top = rng.uniform_int(0, in_h - crop_h);
                rec.crop_left = rng.uniform_int(0, in_w - crop_w);
                found = crop_overlap(weak.crop_top, weak.crop_left, rec.crop_top, rec.crop_left,
                                     crop_h, crop_w) >= cfg.min_overlap;
            }
            if (!found)
                throw std::runtime_error(
                    "sample_strong: could not satisfy min-overlap after 1000 draws; "
                    "crop/input sizes are inconsistent with the threshold");
            break;
        }
    }
    rec.geometric = crop_transform(in_h, in_w, rec.crop_top, rec.crop_left, crop_h, crop_w);

    for (int i = 0; i < cfg.n_ops; ++i) {
        const int pick = rng.uniform_int(0, static_cast<int>(cfg.pool.size()) - 1);
        const double mag = rng.uniform(cfg.mag_lo, cfg.mag_hi);
        if (pick < static_cast<int>(cfg.pool.geom.size())) {
            GeomTransform op;
            switch (cfg.pool.geom[static_cast<std::size_t>(pick)]) {
                case GeomOpKind::Rotate:
                    op = rotate_transform(crop_h, crop_w,
                                          draw_signed(rng, mag) * 30.0 * std::numbers::pi / 180.0);
                    break;
                case GeomOpKind::Translate: {
                    const double dx = draw_signed(rng, mag) * 0.25 * crop_w;
                    const double dy = draw_signed(rng, mag) * 0.25 * crop_h;
                    op = translate_transform(crop_h, crop_w, dx, dy);
                    break;
                }
                case GeomOpKind::Shear:
                    op = shear_transform(crop_h, crop_w, draw_signed(rng, mag) * 0.3);
                    break;
                case GeomOpKind::HFlip:
                    op = hflip_transform(crop_h, crop_w);
                    break;
            }
            rec.geometric = compose(op, rec.geometric);
            if (cfg.pool.geom[static_cast<std::size_t>(pick)] == GeomOpKind::HFlip) rec.flipped = !rec.flipped;
        } else {
            PhotometricOp op;
            op.kind = cfg.pool.color[static_cast<std::size_t>(pick) - cfg.pool.geom.size()];
            switch (op.kind) {
                case PhotoKind::Brightness:
                    op.magnitude = draw_signed(rng, mag) * 0.4;
                    break;
                case PhotoKind::Contrast:
                case PhotoKind::SaturationProxy:
                    op.magnitude = 1.0 + draw_signed(rng, mag) * 0.4;
                    break;
                case PhotoKind::GaussianNoise:
                    op.magnitude = mag * 0.08;
                    op.noise_seed = rng.next_u64();
                    break;
            }
            rec.photometric.push_back(op);
        }
    }

    if (cfg.cutout) {
        for (int b = 0; b < cfg.cutout_boxes; ++b) {
            CutoutBox box;
            box.height = std::max(1, static_cast<int>(std::lround(crop_h * rng.uniform(cfg.cutout_lo, cfg.cutout_hi))));
            box.width = std::max(1, static_cast<int>(std::lround(crop_w * rng.uniform(cfg.cutout_lo, cfg.cutout_hi))));
            box.height = std::min(box.height, crop_h);
            box.width = std::min(box.width, crop_w);
            box.top = rng.uniform_int(0, crop_h - box.height);
            box.left = rng.uniform_int(0, crop_w - box.width);
            rec.cutout.push_back(box);
        }
    }
    return rec;
}

Tensor apply_to_image(const AugRecord& rec, const Tensor& image) {
    if (image.ndim() != 3 || image.extent(0) != 3)
        throw std::invalid_argument("apply_to_image: expected [3,H,W] image");
    const int in_h = image.extent(1), in_w = image.extent(2);
    if (in_h != rec.geometric.in_h || in_w != rec.geometric.in_w)
        throw std::invalid_argument("apply_to_image: image does not match the record's input frame");
    const int out_h = rec.geometric.out_h, out_w = rec.geometric.out_w;
    const auto src = image.values();
    std::vector<double> out(static_cast<std::size_t>(3) * out_h * out_w, 0.0);

    auto sample = [&](int c, int y, int x) -> double {
        if (y < 0 || y >= in_h || x < 0 || x >= in_w) return 0.0;
        return src[(static_cast<std::size_t>(c) * in_h + static_cast<std::size_t>(y)) * in_w +
                   static_cast<std::size_t>(x)];
    };

    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double xs, ys;
            rec.geometric.apply(x, y, xs, ys);
            const int x0 = static_cast<int>(std::floor(xs));
            const int y0 = static_cast<int>(std::floor(ys));
            const double fx = xs - x0, fy = ys - y0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - fy) * ((1 - fx) * sample(c, y0, x0) + fx * sample(c, y0, x0 + 1)) +
                                 fy * ((1 - fx) * sample(c, y0 + 1, x0) + fx * sample(c, y0 + 1, x0 + 1));
                out[(static_cast<std::size_t>(c) * out_h + static_cast<std::size_t>(y)) * out_w +
                    static_cast<std::size_t>(x)] = v;
            }
        }
    }

    auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (const auto& op : rec.photometric) {
        switch (op.kind) {
            case PhotoKind::Brightness:
                for (auto& v : out) v = clamp01(v + op.magnitude);
                break;
            case PhotoKind::Contrast:
                for (auto& v : out) v = clamp01(0.5 + (v - 0.5) * op.magnitude);
                break;
            case PhotoKind::SaturationProxy:
                for (std::size_t j = 0; j < plane; ++j) {
                    const double gray = (out[j] + out[plane + j] + out[2 * plane + j]) / 3.0;
                    for (int c = 0; c < 3; ++c) {
                        auto& v = out[static_cast<std::size_t>(c) * plane + j];
                        v = clamp01(gray + (v - gray) * op.magnitude);
                    }
                }
                break;
            case PhotoKind::GaussianNoise: {
                Rng noise(op.noise_seed);
                for (auto& v : out) v = clamp01(v + noise.normal(0.0, op.magnitude));
                break;
            }
        }
    }

    for (const auto& box : rec.cutout) {
        for (int c = 0; c < 3; ++c)
            for (int y = box.top; y < box.top + box.height; ++y)
                for (int x = box.left; x < box.left + box.width; ++x)
                    out[(static_cast<std::size_t>(c) * out_h + static_cast<std::size_t>(y)) * out_w +
                        static_cast<std::size_t>(x)] = 0.5;
    }

    return Tensor::from({3, out_h, out_w}, std::move(out));
}

LabelMap apply_geom_to_labels(const GeomTransform& g, const LabelMap& labels) {
    if (labels.height != g.in_h || labels.width != g.in_w)
        throw std::invalid_argument("apply_geom_to_labels: labels do not match the transform's input frame");
    LabelMap out(g.out_h, g.out_w, kIgnoreLabel);
    for (int y = 0; y < g.out_h; ++y) {
        for (int x = 0; x < g.out_w; ++x) {
            double xs, ys;
            g.apply(x, y, xs, ys);
            const int xi = static_cast<int>(std::floor(xs + 0.5));
            const int yi = static_cast<int>(std::floor(ys + 0.5));
            if (xi < 0 || xi >= g.in_w || yi < 0 || yi >= g.in_h) continue;
            out.at(y, x) = labels.at(yi, xi);
        }
    }
    return out;
}

std::string to_text(const AugRecord& rec) {
    std::ostringstream os;
    os << "geom in=" << rec.geometric.in_h << "x" << rec.geometric.in_w
       << " out=" << rec.geometric.out_h << "x" << rec.geometric.out_w
       << " crop=(" << rec.crop_top << "," << rec.crop_left << ")"
       << " flipped=" << (rec.flipped ? 1 : 0) << "\n";
    os << "matrix";
    for (double v : rec.geometric.map) os << " " << v;
    os << "\n";
    for (const auto& op : rec.photometric) {
        switch (op.kind) {
            case PhotoKind::Brightness: os << "photo brightness " << op.magnitude << "\n"; break;
            case PhotoKind::Contrast: os << "photo contrast " << op.magnitude << "\n"; break;
            case PhotoKind::SaturationProxy: os << "photo saturation " << op.magnitude << "\n"; break;
            case PhotoKind::GaussianNoise:
                os << "photo noise " << op.magnitude << " seed=" << op.noise_seed << "\n";
                break;
        }
    }
    for (const auto& box : rec.cutout)
        os << "cutout top=" << box.top << " left=" << box.left << " h=" << box.height
           << " w=" << box.width << "\n";
    return os.str();
}

}  // namespace densefix
