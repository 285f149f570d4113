#pragma once

#include <stdexcept>
#include <string>

namespace dangerdet {

// Every failure raised by the library carries the owning module and the
// error case name so the CLI can report "module::Kind".
class Error : public std::runtime_error {
public:
    Error(std::string module, std::string kind, const std::string& message)
        : std::runtime_error(message), module_(std::move(module)), kind_(std::move(kind)) {}

    const std::string& module() const noexcept { return module_; }
    const std::string& kind() const noexcept { return kind_; }
    std::string qualified_name() const { return module_ + "::" + kind_; }

private:
    std::string module_;
    std::string kind_;
};

}  // namespace dangerdet
