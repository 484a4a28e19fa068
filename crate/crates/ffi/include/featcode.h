#ifndef FEATCODE_H
#define FEATCODE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_INVALID_SHAPE = 3,
  FC_STATUS_CALIBRATION = 4,
  FC_STATUS_UNKNOWN_CODEC = 5,
  FC_STATUS_UNSUPPORTED_BIT_DEPTH = 6,
  FC_STATUS_MALFORMED_BITSTREAM = 7,
  FC_STATUS_IO = 8,
  FC_STATUS_BUFFER_TOO_SMALL = 9,
  FC_STATUS_INTERNAL = 255,
} FcStatus;

typedef enum FcPrecision {
  FC_PRECISION_FP32 = 0,
  FC_PRECISION_FP16 = 1,
  FC_PRECISION_BF16 = 2,
} FcPrecision;

/**
 * Opaque encoded bitstream with its serialized bytes.
 */
typedef struct FcBitstream FcBitstream;

/**
 * Opaque tensor handle.
 */
typedef struct FcTensor FcTensor;

/**
 * Opaque frozen quantization transform.
 */
typedef struct FcTransform FcTransform;

/**
 * Redundancy statistics of one tensor. Undefined values are NaN.
 */
typedef struct FcAnalysis {
  double rho_h;
  double rho_v;
  size_t valid_rows;
  size_t valid_cols;
  double g_dct;
  double c_dct;
} FcAnalysis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *fc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Copies `len` values into a new tensor, rounding them to `precision`.
 */
enum FcStatus fc_tensor_new(const char *id,
                            const size_t *shape,
                            size_t rank,
                            const float *values,
                            size_t len,
                            enum FcPrecision precision,
                            struct FcTensor **out);

/**
 * Synthetic tensor from a named archetype (e.g. "latent_spatial").
 */
enum FcStatus fc_tensor_generate(const char *archetype,
                                 const size_t *shape,
                                 size_t rank,
                                 uint64_t seed,
                                 struct FcTensor **out);

size_t fc_tensor_len(const struct FcTensor *tensor);

size_t fc_tensor_rank(const struct FcTensor *tensor);

/**
 * Copies the shape into `dims`, which must hold `fc_tensor_rank` entries.
 */
enum FcStatus fc_tensor_shape(const struct FcTensor *tensor, size_t *dims, size_t capacity);

/**
 * Borrowed pointer to `fc_tensor_len` FP32 values; lives as long as the handle.
 */
const float *fc_tensor_values(const struct FcTensor *tensor);

void fc_tensor_free(struct FcTensor *tensor);

/**
 * Fits a transform on `count` calibration tensors.
 */
enum FcStatus fc_transform_calibrate(const struct FcTensor *const *tensors,
                                     size_t count,
                                     const char *role,
                                     struct FcTransform **out);

/**
 * Identity-style transform mapping `[lo, hi]` linearly onto `[0, 1]`.
 */
enum FcStatus fc_transform_linear(float lo, float hi, struct FcTransform **out);

void fc_transform_free(struct FcTransform *transform);

/**
 * Pack, quantize and encode with the named codec.
 */
enum FcStatus fc_encode(const struct FcTensor *tensor,
                        const struct FcTransform *transform,
                        const char *codec,
                        double lambda,
                        uint8_t bit_depth,
                        struct FcBitstream **out);

/**
 * Parses serialized bytes into a bitstream handle.
 */
enum FcStatus fc_bitstream_from_bytes(const uint8_t *data, size_t len, struct FcBitstream **out);

/**
 * Borrowed view of the serialized bytes; lives as long as the handle.
 */
enum FcStatus fc_bitstream_bytes(const struct FcBitstream *bitstream,
                                 const uint8_t **data,
                                 size_t *len);

uint64_t fc_bitstream_payload_bits(const struct FcBitstream *bitstream);

uint64_t fc_bitstream_header_bits(const struct FcBitstream *bitstream);

void fc_bitstream_free(struct FcBitstream *bitstream);

/**
 * Decode, dequantize and unpack into an FP32 tensor. `id` may be NULL.
 */
enum FcStatus fc_decode(const struct FcBitstream *bitstream, const char *id, struct FcTensor **out);

enum FcStatus fc_bpfp(uint64_t payload_bits, uint64_t element_count, double *out);

/**
 * `raw_bits` is the source precision: 32 or 16.
 */
enum FcStatus fc_ebpfp(uint64_t payload_bits,
                       uint64_t element_count,
                       uint32_t raw_bits,
                       double *out);

/**
 * Maximum operating bandwidth in bits per second.
 */
enum FcStatus fc_b_max(uint64_t s_raw_bits,
                       uint64_t s_enc_bits,
                       double t_enc_s,
                       double t_dec_s,
                       double *out_bps);

enum FcStatus fc_mse(const struct FcTensor *original,
                     const struct FcTensor *reconstructed,
                     double *out);

enum FcStatus fc_analyze(const struct FcTensor *tensor, struct FcAnalysis *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEATCODE_H */
