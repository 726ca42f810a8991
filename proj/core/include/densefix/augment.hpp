#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densefix/label_map.hpp"
#include "densefix/rng.hpp"
#include "densefix/tensor.hpp"

namespace densefix {

/// Invertible 2D affine map between pixel frames, stored as a homogeneous
/// 3x3 matrix taking OUTPUT pixel coordinates (x, y, 1) to INPUT pixel
/// coordinates. Pixel centers sit at integer coordinates. Both frame
/// extents are recorded so inversion can restore the source frame.
struct GeomTransform {
    std::array<double, 9> map{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    int in_h = 0, in_w = 0;
    int out_h = 0, out_w = 0;

    static GeomTransform identity(int h, int w);

    /// Maps an output-frame point to input-frame coordinates.
    void apply(double x_out, double y_out, double& x_in, double& y_in) const;
};

/// Single transform equivalent to applying g_inner first, then g_outer.
/// One composed warp resamples once, so no error accumulates per stage.
GeomTransform compose(const GeomTransform& g_outer, const GeomTransform& g_inner);

/// Matrix inverse with frames swapped. Near-singular maps throw.
GeomTransform invert(const GeomTransform& g);

bool nearly_identity(const GeomTransform& g, double tol = 1e-9);

enum class PhotoKind { Brightness, Contrast, SaturationProxy, GaussianNoise };

/// Photometric change applied to images only; label maps pass through.
struct PhotometricOp {
    PhotoKind kind = PhotoKind::Brightness;
    double magnitude = 0.0;        // op-specific: delta, factor, or sigma
    std::uint64_t noise_seed = 0;  // used by GaussianNoise only
};

struct CutoutBox {
    int top = 0, left = 0, height = 0, width = 0;
};

/// The full sampled description of one augmentation pipeline instance.
/// Applying the record to an image means: geometric warp, then photometric
/// ops in order, then cutout fill. The geometric component alone is
/// recoverable and invertible; the crop window that went into it is kept
/// for crop-relation sampling between pipelines.
struct AugRecord {
    GeomTransform geometric;
    std::vector<PhotometricOp> photometric;
    std::vector<CutoutBox> cutout;
    int crop_top = 0, crop_left = 0;
    bool flipped = false;
};

enum class GeomOpKind { Rotate, Translate, Shear, HFlip };

struct AugPool {
    std::vector<GeomOpKind> geom;
    std::vector<PhotoKind> color;
    std::size_t size() const { return geom.size() + color.size(); }
};

/// Default op pool: rotate <=30deg, translate <=0.25*size, shear <=0.3,
/// horizontal flip; brightness +-0.4, contrast x[0.6,1.4], gaussian noise
/// sigma <=0.08.
AugPool default_pool(bool use_geom, bool use_color);

enum class CropRelation { Same, MinOverlap, Any };

struct StrongAugConfig {
    AugPool pool = default_pool(true, true);
    int n_ops = 2;
    double mag_lo = 0.1, mag_hi = 1.0;  // normalized magnitude range in [0,1]
    CropRelation crop_relation = CropRelation::MinOverlap;
    double min_overlap = 0.25;  // intersection-over-crop-area threshold
    bool cutout = true;
    int cutout_boxes = 1;
    double cutout_lo = 0.25, cutout_hi = 0.5;  // box side as fraction of crop side
};

/// Weak pipeline: uniform random crop window composed with horizontal flip.
/// No photometric ops, no cutout. Crop larger than the input throws.
AugRecord sample_weak(Rng& rng, int in_h, int in_w, int crop_h, int crop_w,
                      double flip_prob = 0.5);

/// Strong pipeline: crop chosen relative to the weak record's window per
/// cfg.crop_relation, then cfg.n_ops draws from the pool (geometric draws
/// fold into the composed transform, color draws append in order), then
/// cutout last. MinOverlap rejection-samples; 1000 failed draws throw.
AugRecord sample_strong(Rng& rng, int in_h, int in_w, int crop_h, int crop_w,
                        const StrongAugConfig& cfg, const AugRecord& weak);

/// Bilinear geometric warp (out-of-bounds source reads 0), photometric ops
/// in order with values clamped to [0,1] after each, cutout boxes filled
/// with 0.5 gray. Deterministic. Image layout [3,H,W].
Tensor apply_to_image(const AugRecord& rec, const Tensor& image);

/// Nearest-neighbor warp. Output pixels whose source falls outside the
/// input, or whose source pixel is ignore, become ignore.
LabelMap apply_geom_to_labels(const GeomTransform& g, const LabelMap& labels);

/// Fraction of window area shared by two equal-size crop windows.
double crop_overlap(int top_a, int left_a, int top_b, int left_b, int crop_h, int crop_w);

/// Structured text dump of a record for debugging; documented, not
/// bit-critical.
std::string to_text(const AugRecord& rec);

}  // namespace densefix
