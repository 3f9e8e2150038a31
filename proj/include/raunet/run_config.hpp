#pragma once

#include <filesystem>
#include <string>

#include "raunet/loss.hpp"
#include "raunet/model.hpp"
#include "raunet/synth_data.hpp"
#include "raunet/trainer.hpp"

namespace raunet {

// Flat key=value configuration (UTF-8, '#' comments) covering the model,
// loss, trainer and generator settings. Unknown keys are rejected; CLI flags
// are applied as overrides on top of the file. Every run serializes its
// fully-resolved config next to its outputs.
struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    GenSpec gen;

    static RunConfig from_file(const std::filesystem::path& path);

    // `key=value` assignment; throws ShapeError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);

    std::string serialize() const;
    void write(const std::filesystem::path& path) const;
};

}  // namespace raunet
