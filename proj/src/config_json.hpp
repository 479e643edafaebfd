#pragma once

#include "isggen/config.hpp"
#include "json.hpp"

namespace isg {

using ojson = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, source, count, seed, num_steps, edge_density,
                                                min_object_area_fraction, min_objects, max_objects, image_size,
                                                mask_size, split, annotations, image_root)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, image_size, embed_dim, gcn_layers, gcn_hidden,
                                                layout_hidden, mask_size, mask_channels, min_box_extent,
                                                start_resolution, crn_channels, crn_final_channels, noise_channels,
                                                crop_size, d_image_channels, d_object_channels, init_seed,
                                                perceptual_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, gan, box, mask, pixel, pixel_step, perceptual)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, steps_per_sequence, batch_size, lr_generator,
                                                lr_discriminator, beta1, beta2, iterations, seed, checkpoint_every,
                                                fault_inject_nan_iter, weights, device)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, metric, splits, classifier, independent, seed,
                                                max_sequences, classifier_train_count, classifier_epochs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ServeConfig, host, port, store)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, dataset, out, checkpoint, sequence, images, resume)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, data, model, train, eval, serve, paths)

// Canonical serialization of a JSON value (keys in declaration order,
// doubles with round-trip precision).
std::string canonical(const ojson& j);

}  // namespace isg
