#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "compartos/module.hpp"

namespace compartos {

enum class AsmErrorKind { SyntaxError, DuplicateSymbol, UnknownMnemonic };

class AsmError : public std::runtime_error {
public:
    AsmError(AsmErrorKind kind, int line, const std::string& message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message),
          kind_(kind),
          line_(line)
    {
    }
    AsmErrorKind kind() const { return kind_; }
    int line() const { return line_; }

private:
    AsmErrorKind kind_;
    int line_;
};

// Assembly source is UTF-8 text, one statement per line, '#' comments.
// Directives: .section .global .interface .local .word .zero
// Labels starting with ".L" are assembly-local and never become symbols.
// `cap(sym)` operands lower to CLC through CGP with a GPREL_SLOT relocation.
ModuleImage assemble(std::string_view source, const std::string& module_name);

}  // namespace compartos
