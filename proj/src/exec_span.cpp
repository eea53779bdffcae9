#include "tracead/exec_span.hpp"

namespace tracead {

std::string_view to_string(Label label) noexcept
{
    switch (label) {
    case Label::Normal: return "NORMAL";
    case Label::Anomaly: return "ANOMALY";
    default: return "UNLABELED";
    }
}

char label_code(Label label) noexcept
{
    switch (label) {
    case Label::Normal: return 'N';
    case Label::Anomaly: return 'A';
    default: return 'U';
    }
}

std::optional<Label> label_from_code(std::string_view code) noexcept
{
    if (code == "N" || code == "NORMAL") {
        return Label::Normal;
    }
    if (code == "A" || code == "ANOMALY") {
        return Label::Anomaly;
    }
    if (code == "U" || code == "UNLABELED") {
        return Label::Unlabeled;
    }
    return std::nullopt;
}

} // namespace tracead
