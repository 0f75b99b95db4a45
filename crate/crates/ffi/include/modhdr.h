/* C interface for the modhdr HDR-reconstruction library. */

#ifndef MODHDR_H
#define MODHDR_H

#include <stddef.h>
#include <stdint.h>

/**
 * Call outcome. Zero is success; anything else leaves a message in
 * [`mhdr_last_error`].
 */
enum MhdrStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  MHDR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MHDR_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MHDR_STATUS_UTF8 = 2,
  /**
   * Arguments were structurally valid but semantically rejected.
   */
  MHDR_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Shape, channel count, or bit depth outside the supported range.
   */
  MHDR_STATUS_UNSUPPORTED = 4,
  /**
   * Filesystem failure.
   */
  MHDR_STATUS_IO = 5,
  /**
   * Malformed or mismatched file contents.
   */
  MHDR_STATUS_FORMAT = 6,
  /**
   * Internal failure (a panic was caught at the boundary).
   */
  MHDR_STATUS_INTERNAL = 7,
};
#ifndef __cplusplus
typedef int32_t MhdrStatus;
#endif // __cplusplus

/**
 * Opaque image handle: planar float64 samples, 1 or 3 channels.
 */
typedef struct MhdrImage MhdrImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty until a call
 * fails. The pointer is invalidated by the next failing call.
 */
const char *mhdr_last_error(void);

/**
 * Allocates a zero-filled image. `channels` must be 1 or 3.
 */
MhdrStatus mhdr_image_new(size_t height, size_t width, size_t channels, struct MhdrImage **out);

/**
 * Allocates an image from `len = height * width * channels` planar
 * samples (all of channel 0 row-major, then channel 1, ...).
 */
MhdrStatus mhdr_image_from_data(size_t height,
                                size_t width,
                                size_t channels,
                                const double *data,
                                size_t len,
                                struct MhdrImage **out);

/**
 * Releases an image handle. Null is a no-op.
 */
void mhdr_image_free(struct MhdrImage *img);

/**
 * Writes the image dimensions through the non-null out pointers.
 */
MhdrStatus mhdr_image_dims(const struct MhdrImage *img,
                           size_t *height,
                           size_t *width,
                           size_t *channels);

/**
 * Total sample count (`height * width * channels`); 0 for a null handle.
 */
size_t mhdr_image_len(const struct MhdrImage *img);

/**
 * Borrowed pointer to the planar samples, valid while the handle lives;
 * null for a null handle.
 */
const double *mhdr_image_data(const struct MhdrImage *img);

/**
 * Generates a synthetic scene. `kind` is one of "gaussian-bumps", "ramp",
 * "step", "checker"; `peak` is the brightest value in DN.
 */
MhdrStatus mhdr_synth_scene(const char *kind,
                            size_t height,
                            size_t width,
                            size_t channels,
                            double peak,
                            uint64_t seed,
                            struct MhdrImage **out);

/**
 * Wraps a scene into the `[0, 2^bits)` modulo range, noise-free.
 */
MhdrStatus mhdr_wrap(const struct MhdrImage *x, uint32_t bits, struct MhdrImage **out);

/**
 * Simulates a modulo sensor read: Gaussian noise of `sigma` DN is added
 * before wrapping. `sigma <= 0` degenerates to a clean wrap.
 */
MhdrStatus mhdr_sense(const struct MhdrImage *x,
                      uint32_t bits,
                      double sigma,
                      uint64_t seed,
                      struct MhdrImage **out);

/**
 * Reconstructs by least-squares integration of the wrapped gradient, with
 * the mean pinned to the measurement mean.
 */
MhdrStatus mhdr_reconstruct_itoh(const struct MhdrImage *y, uint32_t bits, struct MhdrImage **out);

/**
 * Reconstructs by ADMM with the transform-threshold denoiser; the plug-in
 * denoiser runs at `sqrt(lambda / rho)`.
 */
MhdrStatus mhdr_reconstruct_admm(const struct MhdrImage *y,
                                 uint32_t bits,
                                 size_t iters,
                                 double rho,
                                 double lambda,
                                 struct MhdrImage **out);

/**
 * Runs the unrolled network loaded from a weight file produced by the
 * trainer. The file must hold unrolled weights, not bare denoiser weights.
 */
MhdrStatus mhdr_reconstruct_unrolled(const struct MhdrImage *y,
                                     uint32_t bits,
                                     const char *weights_path,
                                     struct MhdrImage **out);

/**
 * Shifts `est` so its mean matches `ref`; reconstructions from wrapped
 * data are only determined up to a constant.
 */
MhdrStatus mhdr_align_dc_mean(const struct MhdrImage *reference,
                              const struct MhdrImage *estimate,
                              struct MhdrImage **out);

/**
 * Linear-domain PSNR against `peak`; identical images yield +infinity.
 */
MhdrStatus mhdr_psnr_l(const struct MhdrImage *reference,
                       const struct MhdrImage *estimate,
                       double peak,
                       double *out);

/**
 * PSNR after mu-law tone compression of both images; identical images
 * yield +infinity.
 */
MhdrStatus mhdr_psnr_mu(const struct MhdrImage *reference,
                        const struct MhdrImage *estimate,
                        double peak,
                        double *out);

/**
 * Mean single-scale SSIM; inputs are expected in [0, 1].
 */
MhdrStatus mhdr_ssim(const struct MhdrImage *reference,
                     const struct MhdrImage *estimate,
                     double *out);

/**
 * Mean universal quality index over 8x8 sliding windows.
 */
MhdrStatus mhdr_q_index(const struct MhdrImage *reference,
                        const struct MhdrImage *estimate,
                        double *out);

/**
 * Global Reinhard tone mapping for display: exposure `alpha`, then
 * luminance compression `L / (L + beta)` with the gain shared across
 * channels. Samples must be nonnegative.
 */
MhdrStatus mhdr_tonemap_reinhard(const struct MhdrImage *x,
                                 double alpha,
                                 double beta,
                                 struct MhdrImage **out);

/**
 * Reads a PFM file (grayscale or RGB, float32).
 */
MhdrStatus mhdr_read_pfm(const char *path, struct MhdrImage **out);

/**
 * Writes a PFM file; float32 samples survive a round trip exactly.
 */
MhdrStatus mhdr_write_pfm(const char *path, const struct MhdrImage *img);

/**
 * Reads an 8- or 16-bit PNG into integer DN samples.
 */
MhdrStatus mhdr_read_png(const char *path, struct MhdrImage **out);

/**
 * Writes a PNG at `bits` in {8, 16}; samples must already be integers in
 * range.
 */
MhdrStatus mhdr_write_png(const char *path, const struct MhdrImage *img, uint32_t bits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODHDR_H */
