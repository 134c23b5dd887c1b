#pragma once

#include <functional>
#include <string>
#include <vector>

#include "uvga/config.hpp"
#include "uvga/decoder.hpp"
#include "uvga/denoiser.hpp"
#include "uvga/synthetic.hpp"
#include "uvga/teacher.hpp"

namespace uvga {

struct LoadedDataset {
    DatasetManifest manifest;
    BodyTemplate body;
    std::vector<AttributeMap> maps;
    std::vector<std::vector<std::string>> captions;  // long caption first
};

LoadedDataset load_dataset(const std::string& dir);

std::vector<Tensor> encode_dataset(const TeacherEncoder& teacher,
                                   const std::vector<AttributeMap>& maps);

using StepLogger = std::function<void(int step, double loss)>;

struct DecoderTrainResult {
    ParamStore store;
    std::vector<double> losses;
};

// Attribute-mode training (plus optional render-mode fine-tuning steps).
DecoderTrainResult train_decoder_run(const DecoderNet& dec, const RunConfig& cfg,
                                     const std::vector<Tensor>& latents,
                                     const std::vector<AttributeMap>& maps,
                                     const LoadedDataset& data, int render_steps = 0,
                                     const StepLogger& log = nullptr);

struct DenoiserTrainResult {
    ParamStore store;
    std::vector<double> losses;
    int64_t dropout_drawn = 0;
    int64_t dropout_hits = 0;
};

// Optional periodic model probe (e.g. a fixed validation loss).
using TrainProbe = std::function<void(int step, const ParamStore& store)>;

DenoiserTrainResult train_denoiser_run(const DenoiserNet& dn, const RunConfig& cfg,
                                       const std::vector<Tensor>& latents,
                                       const std::vector<std::vector<std::string>>& captions,
                                       const StepLogger& log = nullptr,
                                       const TrainProbe& probe = nullptr, int probe_every = 0);

}  // namespace uvga
