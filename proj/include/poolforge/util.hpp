#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace poolforge {

/// Worker count: POOLFORGE_THREADS if set and positive, else hardware
/// concurrency (at least 1).
std::size_t thread_count();

/// Runs body(i) for i in [0, n) across thread_count() workers. Each index is
/// visited exactly once; callers write to disjoint slots so the result does
/// not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

void log_info(std::string_view msg);
void log_warn(std::string_view msg);
/// Silences log_info (warnings still print). Used by tests.
void set_quiet(bool quiet);

/// Writes `contents` to `path` via a sibling temp file and rename, so a
/// reader never observes a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Hex SHA-256 over every regular file under `dir`, visited in sorted
/// relative-path order; both the path and the bytes are hashed.
std::string directory_digest(const std::filesystem::path& dir);
std::string sha256_hex(std::string_view bytes);

/// Recursively copies `from` into a fresh `to` (removing `to` first).
void copy_directory(const std::filesystem::path& from, const std::filesystem::path& to);

}  // namespace poolforge
