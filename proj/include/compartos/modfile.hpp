#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "compartos/module.hpp"

namespace compartos {

// ".cpo" relocatable module container. Magic "CPOS", version u16,
// little-endian throughout.

enum class ModfileError : uint8_t {
    BadMagic,
    TruncatedInput,
    UnknownVersion,
    Malformed,
};

const char* modfile_error_name(ModfileError err);

class ModfileException : public std::runtime_error {
public:
    ModfileException(ModfileError code, const std::string& what)
        : std::runtime_error(what), code_(code)
    {
    }
    ModfileError code() const { return code_; }

private:
    ModfileError code_;
};

std::vector<uint8_t> encode(const ModuleImage& image);
ModuleImage decode(std::span<const uint8_t> bytes);  // throws ModfileException

}  // namespace compartos
