#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace climemu {

enum class ChannelRole { input, output };

struct FieldChannel {
  std::string_view id;
  ChannelRole role;
  std::string_view units;
  std::string_view long_name;
};

inline constexpr std::size_t kNumInputs = 6;
inline constexpr std::size_t kNumOutputs = 3;

// Canonical order; datasets, models and files all use it.
inline constexpr std::array<FieldChannel, kNumInputs> kInputChannels{{
    {"sw_cre_toa", ChannelRole::input, "W m-2", "shortwave cloud radiative effect, top of atmosphere"},
    {"lw_cre_toa", ChannelRole::input, "W m-2", "longwave cloud radiative effect, top of atmosphere"},
    {"sw_cre_surf", ChannelRole::input, "W m-2", "shortwave cloud radiative effect, surface"},
    {"lw_cre_surf", ChannelRole::input, "W m-2", "longwave cloud radiative effect, surface"},
    {"net_clearsky_toa", ChannelRole::input, "W m-2", "net clear-sky radiation, top of atmosphere"},
    {"net_clearsky_surf", ChannelRole::input, "W m-2", "net clear-sky radiation, surface"},
}};

inline constexpr std::array<FieldChannel, kNumOutputs> kOutputChannels{{
    {"psl", ChannelRole::output, "Pa", "sea-level pressure"},
    {"pr", ChannelRole::output, "mm day-1", "precipitation"},
    {"tas", ChannelRole::output, "K", "near-surface air temperature"},
}};

enum InputIndex : std::size_t {
  kSwCreToa = 0,
  kLwCreToa,
  kSwCreSurf,
  kLwCreSurf,
  kNetClearskyToa,
  kNetClearskySurf,
};

enum OutputIndex : std::size_t { kPsl = 0, kPr, kTas };

inline std::optional<std::size_t> input_index(std::string_view id) {
  for (std::size_t i = 0; i < kInputChannels.size(); ++i)
    if (kInputChannels[i].id == id) return i;
  return std::nullopt;
}

inline std::optional<std::size_t> output_index(std::string_view id) {
  for (std::size_t i = 0; i < kOutputChannels.size(); ++i)
    if (kOutputChannels[i].id == id) return i;
  return std::nullopt;
}

inline std::string_view to_string(ChannelRole role) {
  return role == ChannelRole::input ? "input" : "output";
}

}  // namespace climemu
