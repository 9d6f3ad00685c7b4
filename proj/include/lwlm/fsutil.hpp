// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lwlm::fsutil {

/// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace lwlm::fsutil
