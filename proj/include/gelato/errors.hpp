#pragma once

#include <stdexcept>
#include <string>

namespace gelato {

// Every library failure derives from Error. The category drives the CLI
// exit code: data/format problems map to 3, numeric failures to 4.
class Error : public std::runtime_error {
public:
    enum class Category { data, numeric };

    explicit Error(const std::string& what, Category category = Category::data)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

#define GELATO_DEFINE_ERROR(Name, Cat)                                            \
    class Name : public Error {                                                   \
    public:                                                                       \
        explicit Name(const std::string& what) : Error(what, Category::Cat) {}    \
    };

GELATO_DEFINE_ERROR(DimensionError, data)
GELATO_DEFINE_ERROR(DegenerateInputError, numeric)
GELATO_DEFINE_ERROR(ZeroNormError, numeric)
GELATO_DEFINE_ERROR(NumericError, numeric)
GELATO_DEFINE_ERROR(MergeIncompatibleError, data)
GELATO_DEFINE_ERROR(PatchingError, data)
GELATO_DEFINE_ERROR(TooShortError, data)
GELATO_DEFINE_ERROR(EmptyInputError, data)
GELATO_DEFINE_ERROR(SlotMismatchError, data)
GELATO_DEFINE_ERROR(StructureError, data)
GELATO_DEFINE_ERROR(ModalityUnavailableError, data)
GELATO_DEFINE_ERROR(VariantNotFoundError, data)
GELATO_DEFINE_ERROR(IntegrityError, data)
GELATO_DEFINE_ERROR(IoError, data)
GELATO_DEFINE_ERROR(ConfigError, data)
GELATO_DEFINE_ERROR(UndefinedMetricError, data)

#undef GELATO_DEFINE_ERROR

} // namespace gelato
