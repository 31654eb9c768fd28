#ifndef GLEAK_ERRORS_HPP
#define GLEAK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gleak {

// Base for everything thrown on purpose by this library. Callers that want a
// single catch point use gleak::Error; tests usually catch the exact type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error { using Error::Error; };          // tensor dims disagree with an op's contract
struct LayoutMismatch : Error { using Error::Error; };      // two gradient vectors index different parameter sets
struct NonFiniteGradient : Error { using Error::Error; };   // NaN/Inf found while flattening a gradient
struct ZeroNormGradient : Error { using Error::Error; };    // cosine distance against a zero vector
struct UnsupportedNoise : Error { using Error::Error; };    // noise family outside {none, gaussian, laplacian}
struct ScheduleError : Error { using Error::Error; };       // invalid beta schedule parameters
struct StepRangeError : Error { using Error::Error; };      // sampler step index outside its legal range
struct SingularStep : Error { using Error::Error; };        // division by a vanishing schedule coefficient
struct SamplerSpecError : Error { using Error::Error; };    // inconsistent (s_for, s_gen, t0) combination
struct WindowError : Error { using Error::Error; };         // image smaller than the similarity window
struct LabelError : Error { using Error::Error; };          // class index outside [0, classes)
struct ConfigError : Error { using Error::Error; };         // bad or unknown configuration key/value
struct IngestError : Error { using Error::Error; };         // unreadable or inconsistent image folder
struct IoError : Error { using Error::Error; };             // file read/write failure

} // namespace gleak

#endif
