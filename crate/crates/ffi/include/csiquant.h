#ifndef CSIQUANT_H
#define CSIQUANT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsqStatus {
  CSQ_STATUS_OK = 0,
  CSQ_STATUS_NULL_POINTER = 1,
  CSQ_STATUS_DIMENSION = 2,
  CSQ_STATUS_NUMERIC = 3,
  CSQ_STATUS_USAGE = 4,
  CSQ_STATUS_DOMAIN = 5,
  CSQ_STATUS_ENCODE = 6,
  CSQ_STATUS_CORRUPT_PAYLOAD = 7,
  CSQ_STATUS_CONFIG = 8,
  CSQ_STATUS_FORMAT = 9,
  CSQ_STATUS_IO = 10,
  CSQ_STATUS_PANIC = 11,
} CsqStatus;

// Opaque trained model.
typedef struct CsqModel CsqModel;

// Extents of a loaded model.
typedef struct CsqModelInfo {
  size_t nc_crop;
  size_t nt;
  size_t codeword_len;
  uint8_t bits;
  // Feedback bits per sample, `codeword_len · bits`.
  size_t feedback_bits;
  // Packed payload bytes per sample.
  size_t payload_bytes;
} CsqModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *csq_last_error(void);

// Bytes needed to pack `len` levels of `bits` bits, or 0 for invalid input.
size_t csq_payload_bytes(uint8_t bits, size_t len);

// Quantizes `len` values in (−1, 1) to `bits`-bit levels and grid values.
// Either output may be null.
//
// # Safety
// Non-null pointers must address `len` elements.
enum CsqStatus csq_quantize(const double *x,
                            size_t len,
                            uint8_t bits,
                            int32_t *out_levels,
                            double *out_values);

// Packs levels MSB-first into `out` of exactly `csq_payload_bytes(bits, len)` bytes.
//
// # Safety
// `levels` must address `len` elements and `out` `out_len` bytes.
enum CsqStatus csq_pack(const int32_t *levels,
                        size_t len,
                        uint8_t bits,
                        uint8_t *out,
                        size_t out_len);

// Unpacks `len` levels of `bits` bits.
//
// # Safety
// `payload` must address `payload_len` bytes and `out_levels` `len` elements.
enum CsqStatus csq_unpack(const uint8_t *payload,
                          size_t payload_len,
                          uint8_t bits,
                          size_t len,
                          int32_t *out_levels);

// Unpacks and maps levels back to grid values `q/2^(bits−1)`.
//
// # Safety
// `payload` must address `payload_len` bytes and `out_values` `len` elements.
enum CsqStatus csq_dequantize(const uint8_t *payload,
                              size_t payload_len,
                              uint8_t bits,
                              size_t len,
                              double *out_values);

// Loads a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CsqStatus csq_model_load(const char *path, struct CsqModel **out);

// Releases a handle from [`csq_model_load`]; null is ignored.
//
// # Safety
// `model` must come from `csq_model_load` and not be used afterwards.
void csq_model_free(struct CsqModel *model);

// # Safety
// `model` must be a live handle and `out` writable.
enum CsqStatus csq_model_info(const struct CsqModel *model, struct CsqModelInfo *out);

// Encodes `n` preprocessed samples (`n·nc_crop·nt·2` values in (0,1)) into
// `n` consecutive payloads of `payload_bytes` each.
//
// # Safety
// `x` must address `n·nc_crop·nt·2` values and `out` `out_len` bytes.
enum CsqStatus csq_model_encode(const struct CsqModel *model,
                                const double *x,
                                size_t n,
                                uint8_t *out,
                                size_t out_len);

// Decodes `n` consecutive payloads into `n·nc_crop·nt·2` values.
//
// # Safety
// `payload` must address `payload_len` bytes and `out` `out_len` values.
enum CsqStatus csq_model_decode(const struct CsqModel *model,
                                const uint8_t *payload,
                                size_t payload_len,
                                size_t n,
                                double *out,
                                size_t out_len);

// Encoder, bit codec and decoder in one call on `n` preprocessed samples.
//
// # Safety
// `x` and `out` must each address `n·nc_crop·nt·2` values.
enum CsqStatus csq_model_reconstruct(const struct CsqModel *model,
                                     const double *x,
                                     size_t n,
                                     double *out);

// Maps one `nc×nt` spatial-frequency channel (interleaved re/im, row-major)
// to the model's `nc_crop×nt×2` input.
//
// # Safety
// `h` must address `2·nc·nt` values and `out` `nc_crop·nt·2` values.
enum CsqStatus csq_preprocess(const struct CsqModel *model,
                              const double *h,
                              size_t nc,
                              double *out);

// Inverts the preprocessing of one `nc_crop×nt×2` reconstruction into an
// `nc×nt` channel, interleaved re/im.
//
// # Safety
// `hcp` must address `nc_crop·nt·2` values and `out` `2·nc·nt` values.
enum CsqStatus csq_invert(const struct CsqModel *model, const double *hcp, size_t nc, double *out);

// Mean normalized squared error over `n` complex `rows×cols` matrices
// stored consecutively with interleaved re/im.
//
// # Safety
// `truth` and `recovered` must each address `2·n·rows·cols` values.
enum CsqStatus csq_nmse(const double *truth,
                        const double *recovered,
                        size_t n,
                        size_t rows,
                        size_t cols,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSIQUANT_H */
