#pragma once

#include "transid/geometry.hpp"
#include "transid/image.hpp"

#include <cstdint>

namespace transid {

/// Attenuation per mm and Gaussian point-spread width in pixels.
struct OpticalParams {
    double mu_solid = 0.08;
    double mu_air = 0.0;
    double diffusion_sigma = 1.0;
    double source_intensity = 1.0;

    void validate() const;
    friend bool operator==(const OpticalParams&, const OpticalParams&) = default;
};

/// Orthographic camera looking along +Y. The frame is centred on the
/// object's nominal centre (X/2, Z/2), shifted by `camera_offset_x` mm.
struct ImagePlane {
    int width = 64;
    int height = 64;
    double pixel_pitch = 1.2;
    double camera_offset_x = 0.0;

    void validate() const;
    friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

struct NoiseModel {
    double gaussian_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// A ray parallel to +Y at horizontal position x and height z (mm).
struct Ray {
    double x = 0.0;
    double z = 0.0;
};

struct PathLengths {
    double solid = 0.0; ///< length through walls and struts (union of chords)
    double air = 0.0;   ///< remaining length inside the outer footprint
};

/// Path lengths of a ray through the geometry, in the layer containing z.
PathLengths trace_ray(const SliceGeometry& geom, Ray ray);
/// Solid path length in mm; 0 for rays missing the object.
double path_length(const SliceGeometry& geom, Ray ray);

/// Beer-Lambert transmission of the posed geometry followed by the diffusion PSF.
/// Throws FootprintError when the posed object leaves the frame.
TransmissionImage render(const SliceGeometry& geom, const OpticalParams& optics, const Pose& pose,
                         const ImagePlane& plane);

/// Same as render() without the PSF stage.
TransmissionImage render_attenuation(const SliceGeometry& geom, const OpticalParams& optics,
                                     const Pose& pose, const ImagePlane& plane);

/// World coordinates (x, z) of the centre of pixel (u, v).
Ray pixel_ray(const SliceGeometry& geom, const ImagePlane& plane, int u, int v);

/// Separable Gaussian blur with a renormalized kernel (radius ceil(4 sigma))
/// and half-sample reflective boundaries. sigma == 0 returns the input.
TransmissionImage apply_psf(const TransmissionImage& img, double sigma);

/// Adds i.i.d. N(0, sigma) per pixel from the seeded stream, clamped to [0, 1].
TransmissionImage add_noise(const TransmissionImage& img, const NoiseModel& noise);

/// Flat sheet of the given thickness (along the ray), 20 x 20 mm, in a
/// 32 x 32 frame at 1 mm pitch. Interior pixels equal exp(-mu_solid * thickness).
TransmissionImage render_single_layer(double thickness, const OpticalParams& optics);

/// Mean over the central 8 x 8 pixels of a render_single_layer() frame.
double single_layer_interior(const TransmissionImage& img);

} // namespace transid
