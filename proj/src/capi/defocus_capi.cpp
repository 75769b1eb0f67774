#include "defocus/defocus.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include <json.hpp>

#include "defocus/errors.hpp"
#include "defocus/image.hpp"
#include "defocus/kernel.hpp"
#include "defocus/pipeline.hpp"
#include "defocus/psf_grid.hpp"

namespace {

thread_local std::string g_last_error = "ok";

df_status fail(df_status status, const char* msg) {
  try {
    g_last_error = msg;
  } catch (...) {
  }
  return status;
}

// Translates the in-flight exception; must be called from a catch block.
df_status translate_current() {
  try {
    throw;
  } catch (const defocus::DimensionError& e) {
    return fail(DF_ERR_DIMENSION, e.what());
  } catch (const defocus::DomainError& e) {
    return fail(DF_ERR_DOMAIN, e.what());
  } catch (const defocus::ParameterError& e) {
    return fail(DF_ERR_PARAMETER, e.what());
  } catch (const defocus::StateError& e) {
    return fail(DF_ERR_STATE, e.what());
  } catch (const defocus::IoError& e) {
    return fail(DF_ERR_IO, e.what());
  } catch (const defocus::FormatError& e) {
    return fail(DF_ERR_FORMAT, e.what());
  } catch (const defocus::DataError& e) {
    return fail(DF_ERR_DATA, e.what());
  } catch (const defocus::ConfigError& e) {
    return fail(DF_ERR_CONFIG, e.what());
  } catch (const defocus::SupportOverflowError& e) {
    return fail(DF_ERR_SUPPORT, e.what());
  } catch (const defocus::DivergenceError& e) {
    return fail(DF_ERR_NUMERIC, e.what());
  } catch (const defocus::ProtocolError& e) {
    return fail(DF_ERR_PROTOCOL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DF_ERR_UNKNOWN, "out of memory");
  } catch (const std::exception& e) {
    return fail(DF_ERR_UNKNOWN, e.what());
  } catch (...) {
    return fail(DF_ERR_UNKNOWN, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

using Runner = nlohmann::json (*)(const nlohmann::json&);

df_status run_command(Runner runner, const char* config_json, char** summary_json) {
  if (summary_json) *summary_json = nullptr;
  if (!config_json) return fail(DF_ERR_CONFIG, "config_json is NULL");
  try {
    nlohmann::json config;
    try {
      config = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      throw defocus::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    const nlohmann::json summary = runner(config);
    if (summary_json) *summary_json = dup_string(summary.dump(2));
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

}  // namespace

struct df_image {
  defocus::ImageF image;
};

struct df_grid {
  defocus::PsfGrid grid;
};

extern "C" {

const char* df_last_error(void) { return g_last_error.c_str(); }

void df_string_free(char* s) { std::free(s); }

df_status df_run_gen(const char* c, char** s) { return run_command(defocus::run_gen, c, s); }
df_status df_run_fit(const char* c, char** s) { return run_command(defocus::run_fit, c, s); }
df_status df_run_render(const char* c, char** s) { return run_command(defocus::run_render, c, s); }
df_status df_run_depth(const char* c, char** s) { return run_command(defocus::run_depth, c, s); }
df_status df_run_eval_psf(const char* c, char** s) {
  return run_command(defocus::run_eval_psf, c, s);
}
df_status df_run_eval_depth(const char* c, char** s) {
  return run_command(defocus::run_eval_depth, c, s);
}
df_status df_run_ablate(const char* c, char** s) { return run_command(defocus::run_ablate, c, s); }
df_status df_run_mosaic(const char* c, char** s) { return run_command(defocus::run_mosaic, c, s); }

df_status df_image_read(const char* path, df_image** out) {
  if (!out) return fail(DF_ERR_PARAMETER, "out is NULL");
  *out = nullptr;
  if (!path) return fail(DF_ERR_PARAMETER, "path is NULL");
  try {
    auto* handle = new df_image{defocus::read_image(path)};
    *out = handle;
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

df_status df_image_create(int width, int height, const double* data, df_image** out) {
  if (!out) return fail(DF_ERR_PARAMETER, "out is NULL");
  *out = nullptr;
  if (!data) return fail(DF_ERR_PARAMETER, "data is NULL");
  try {
    if (width <= 0 || height <= 0) {
      throw defocus::DimensionError("image dimensions must be positive");
    }
    std::vector<double> buf(data, data + static_cast<std::size_t>(width) * height);
    auto* handle = new df_image{defocus::ImageF::from_data(width, height, std::move(buf))};
    *out = handle;
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

df_status df_image_write(const df_image* image, const char* path) {
  if (!image || !path) return fail(DF_ERR_PARAMETER, "image or path is NULL");
  try {
    defocus::write_image(image->image, path);
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

df_status df_image_size(const df_image* image, int* width, int* height) {
  if (!image) return fail(DF_ERR_PARAMETER, "image is NULL");
  if (width) *width = image->image.width();
  if (height) *height = image->image.height();
  return DF_OK;
}

df_status df_image_data(const df_image* image, double* buf, size_t buf_len) {
  if (!image || !buf) return fail(DF_ERR_PARAMETER, "image or buf is NULL");
  const auto& data = image->image.data();
  if (buf_len < data.size()) return fail(DF_ERR_DIMENSION, "buffer too small for image data");
  std::memcpy(buf, data.data(), data.size() * sizeof(double));
  return DF_OK;
}

void df_image_free(df_image* image) { delete image; }

df_status df_grid_load(const char* path, df_grid** out) {
  if (!out) return fail(DF_ERR_PARAMETER, "out is NULL");
  *out = nullptr;
  if (!path) return fail(DF_ERR_PARAMETER, "path is NULL");
  try {
    auto* handle = new df_grid{defocus::load_psf_grid(path)};
    *out = handle;
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

df_status df_grid_save(const df_grid* grid, const char* path) {
  if (!grid || !path) return fail(DF_ERR_PARAMETER, "grid or path is NULL");
  try {
    defocus::save_psf_grid(grid->grid, path);
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

df_status df_grid_info(const df_grid* grid, int* focus_index, int* n_focus, int* radius, int* n_ih,
                       int* n_depth) {
  if (!grid) return fail(DF_ERR_PARAMETER, "grid is NULL");
  if (focus_index) *focus_index = grid->grid.focus_index;
  if (n_focus) *n_focus = grid->grid.n_focus;
  if (radius) *radius = grid->grid.radius;
  if (n_ih) *n_ih = grid->grid.n_ih();
  if (n_depth) *n_depth = grid->grid.n_depth();
  return DF_OK;
}

df_status df_grid_query(const df_grid* grid, double ih, double theta, double depth_m, double* buf,
                        size_t buf_len) {
  if (!grid || !buf) return fail(DF_ERR_PARAMETER, "grid or buf is NULL");
  try {
    const auto len = static_cast<std::size_t>(grid->grid.kernel_len());
    if (buf_len < len) {
      throw defocus::DimensionError("buffer too small for kernel values");
    }
    defocus::PsfKernel k = grid->grid.query(ih, depth_m);
    if (!grid->grid.spatially_invariant() && theta != 0.0) {
      k = defocus::rotate_kernel(k, theta);
    }
    std::memcpy(buf, k.values().data(), len * sizeof(double));
    return DF_OK;
  } catch (...) {
    return translate_current();
  }
}

void df_grid_free(df_grid* grid) { delete grid; }

}  // extern "C"
