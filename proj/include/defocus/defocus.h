/* C interface for the defocus library.
 *
 * Every entry point returns a df_status; no exceptions cross this boundary.
 * On failure df_last_error() returns a message for the calling thread, valid
 * until the next failing call on that thread. Strings returned through output
 * parameters are heap-allocated and must be released with df_string_free().
 */
#ifndef DEFOCUS_DEFOCUS_H
#define DEFOCUS_DEFOCUS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DF_API __declspec(dllexport)
#else
#define DF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum df_status {
  DF_OK = 0,
  DF_ERR_DIMENSION = 1,
  DF_ERR_DOMAIN = 2,
  DF_ERR_PARAMETER = 3,
  DF_ERR_STATE = 4,
  DF_ERR_IO = 5,
  DF_ERR_FORMAT = 6,
  DF_ERR_DATA = 7,
  DF_ERR_CONFIG = 8,
  DF_ERR_SUPPORT = 9,   /* blur support exceeds the kernel radius */
  DF_ERR_NUMERIC = 10,  /* optimization diverged */
  DF_ERR_PROTOCOL = 11, /* evaluation protocol violation */
  DF_ERR_UNKNOWN = 12
} df_status;

/* Message for the most recent failure on the calling thread; never NULL. */
DF_API const char* df_last_error(void);

DF_API void df_string_free(char* s);

/* Command runners. config_json is a JSON object (UTF-8, NUL-terminated)
 * holding that command's settings; unknown keys are rejected. On DF_OK,
 * *summary_json receives a JSON summary of what was done (pass NULL to
 * discard it). */
DF_API df_status df_run_gen(const char* config_json, char** summary_json);
DF_API df_status df_run_fit(const char* config_json, char** summary_json);
DF_API df_status df_run_render(const char* config_json, char** summary_json);
DF_API df_status df_run_depth(const char* config_json, char** summary_json);
DF_API df_status df_run_eval_psf(const char* config_json, char** summary_json);
DF_API df_status df_run_eval_depth(const char* config_json, char** summary_json);
DF_API df_status df_run_ablate(const char* config_json, char** summary_json);
DF_API df_status df_run_mosaic(const char* config_json, char** summary_json);

/* Grayscale image handle ([0,1] doubles in row-major order). */
typedef struct df_image df_image;

DF_API df_status df_image_read(const char* path, df_image** out);
DF_API df_status df_image_create(int width, int height, const double* data, df_image** out);
DF_API df_status df_image_write(const df_image* image, const char* path);
DF_API df_status df_image_size(const df_image* image, int* width, int* height);
/* Copies width*height doubles into buf. */
DF_API df_status df_image_data(const df_image* image, double* buf, size_t buf_len);
DF_API void df_image_free(df_image* image);

/* Fitted PSF grid handle. */
typedef struct df_grid df_grid;

DF_API df_status df_grid_load(const char* path, df_grid** out);
DF_API df_status df_grid_save(const df_grid* grid, const char* path);
DF_API df_status df_grid_info(const df_grid* grid, int* focus_index, int* n_focus, int* radius,
                              int* n_ih, int* n_depth);
/* Kernel at field position (ih, theta) and depth, oriented to theta unless
 * the grid has a single field bin (orientation-free). buf receives
 * (2*radius+1)^2 doubles, row-major, summing to 1. */
DF_API df_status df_grid_query(const df_grid* grid, double ih, double theta, double depth_m,
                               double* buf, size_t buf_len);
DF_API void df_grid_free(df_grid* grid);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DEFOCUS_DEFOCUS_H */
