#ifndef VVKIT_H
#define VVKIT_H

#pragma once

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum VvStatus {
  VV_STATUS_OK = 0,
  // A required pointer argument was null.
  VV_STATUS_NULL_POINTER = 1,
  // A string was not UTF-8 or a buffer was too small.
  VV_STATUS_INVALID_ARGUMENT = 2,
  VV_STATUS_IO = 3,
  VV_STATUS_PARSE = 4,
  VV_STATUS_FORMAT = 5,
  VV_STATUS_UNKNOWN_FORMAT = 6,
  VV_STATUS_MESH = 7,
  VV_STATUS_DIMENSION = 8,
  VV_STATUS_PARAM = 9,
  VV_STATUS_MODEL = 10,
  VV_STATUS_POSE = 11,
  VV_STATUS_INIT = 12,
  VV_STATUS_SOLVER = 13,
  VV_STATUS_CONFIG = 14,
  VV_STATUS_JSON = 15,
  VV_STATUS_PANIC = 99,
} VvStatus;

typedef struct VvGlue VvGlue;

typedef struct VvMesh VvMesh;

typedef struct VvModel VvModel;

typedef struct VvPose VvPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *vv_version(void);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on this thread.
const char *vv_last_error_message(void);

void vv_clear_error(void);

// Loads an OBJ or PLY file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VvStatus vv_mesh_load(const char *path_, struct VvMesh **out);

// Builds a mesh from `vertex_count` xyz triples and `face_count` index
// triples.
//
// # Safety
// The arrays must hold `3 * vertex_count` doubles and `3 * face_count`
// indices.
enum VvStatus vv_mesh_new(const double *vertices,
                          size_t vertex_count,
                          const uint32_t *faces,
                          size_t face_count,
                          struct VvMesh **out);

// # Safety
// `mesh` must be a valid handle and `path_` a NUL-terminated string.
enum VvStatus vv_mesh_save(const struct VvMesh *mesh, const char *path_);

// # Safety
// `mesh` must be null or a handle not yet freed.
void vv_mesh_free(struct VvMesh *mesh);

// Vertex count, 0 for a null handle.
//
// # Safety
// `mesh` must be null or a valid handle.
size_t vv_mesh_vertex_count(const struct VvMesh *mesh);

// Face count, 0 for a null handle.
//
// # Safety
// `mesh` must be null or a valid handle.
size_t vv_mesh_face_count(const struct VvMesh *mesh);

// Copies xyz triples into `out`, which holds `capacity` doubles.
//
// # Safety
// `out` must be writable for `capacity` doubles.
enum VvStatus vv_mesh_copy_vertices(const struct VvMesh *mesh, double *out, size_t capacity);

// Copies index triples into `out`, which holds `capacity` indices.
//
// # Safety
// `out` must be writable for `capacity` indices.
enum VvStatus vv_mesh_copy_faces(const struct VvMesh *mesh, uint32_t *out, size_t capacity);

// Quadric edge-collapse simplification down to `target_faces`.
//
// # Safety
// `mesh` must be a valid handle and `out` a valid pointer.
enum VvStatus vv_decimate(const struct VvMesh *mesh, size_t target_faces, struct VvMesh **out);

// Non-rigid registration of `source` onto `target` with default
// parameters. Writes the deformed source and, if `rms` is not null, the
// symmetric RMS error in metres.
//
// # Safety
// Handles must be valid; `out` must be a valid pointer.
enum VvStatus vv_register(const struct VvMesh *source,
                          const struct VvMesh *target,
                          struct VvMesh **out,
                          double *rms);

// # Safety
// `path_` must be a NUL-terminated string and `out` a valid pointer.
enum VvStatus vv_model_load(const char *path_, struct VvModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void vv_model_free(struct VvModel *model);

// # Safety
// `model` must be null or a valid handle.
size_t vv_model_joint_count(const struct VvModel *model);

// The model's rest (zero) pose.
//
// # Safety
// `model` must be a valid handle and `out` a valid pointer.
enum VvStatus vv_pose_zero(const struct VvModel *model, struct VvPose **out);

// Pose number `index` of a pose file (a single pose or a list).
//
// # Safety
// `path_` must be a NUL-terminated string and `out` a valid pointer.
enum VvStatus vv_pose_load(const char *path_, size_t index, struct VvPose **out);

// # Safety
// `pose` must be a valid handle and `path_` a NUL-terminated string.
enum VvStatus vv_pose_save(const struct VvPose *pose, const char *path_);

// # Safety
// `pose` must be null or a handle not yet freed.
void vv_pose_free(struct VvPose *pose);

// Number of swing/twist scalars: three per non-root joint.
//
// # Safety
// `pose` must be null or a valid handle.
size_t vv_pose_scalar_count(const struct VvPose *pose);

// Copies the joint scalars (swing x, swing y, twist per non-root joint).
//
// # Safety
// `out` must be writable for `capacity` doubles.
enum VvStatus vv_pose_get_scalars(const struct VvPose *pose, double *out, size_t capacity);

// # Safety
// `values` must hold `count` doubles; `count` must equal the scalar count.
enum VvStatus vv_pose_set_scalars(struct VvPose *pose, const double *values, size_t count);

// Sets the root orientation (quaternion w, x, y, z; normalized here) and
// translation (x, y, z).
//
// # Safety
// `rotation` must hold 4 doubles and `translation` 3.
enum VvStatus vv_pose_set_root(struct VvPose *pose,
                               const double *rotation,
                               const double *translation);

// Poses the model.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum VvStatus vv_skin(const struct VvModel *model, const struct VvPose *pose, struct VvMesh **out);

// Fits the model's pose to `frame` from `init` with default parameters.
// `residual` (nullable) receives the RMS model-to-frame distance.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum VvStatus vv_fit_pose(const struct VvModel *model,
                          const struct VvMesh *frame,
                          const struct VvPose *init,
                          struct VvPose **out,
                          double *residual);

// Glues `frame` to `fitted`, the model skinned at the frame's pose.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum VvStatus vv_glue_build(const struct VvMesh *frame,
                            const struct VvMesh *fitted,
                            struct VvGlue **out);

// # Safety
// `path_` must be a NUL-terminated string and `out` a valid pointer.
enum VvStatus vv_glue_load(const char *path_, struct VvGlue **out);

// # Safety
// `glue` must be a valid handle and `path_` a NUL-terminated string.
enum VvStatus vv_glue_save(const struct VvGlue *glue, const char *path_);

// # Safety
// `glue` must be null or a handle not yet freed.
void vv_glue_free(struct VvGlue *glue);

// Number of outlier vertices recorded while gluing.
//
// # Safety
// `glue` must be null or a valid handle.
size_t vv_glue_outlier_count(const struct VvGlue *glue);

// Re-poses a glued frame from `source` (the pose it was glued at) to
// `target`.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum VvStatus vv_retarget(const struct VvGlue *glue,
                          const struct VvModel *model,
                          const struct VvPose *source,
                          const struct VvPose *target,
                          struct VvMesh **out);

// Runs the whole pipeline described by a config file. Reports are
// written to the configured output directory even on failure.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum VvStatus vv_run(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VVKIT_H */
