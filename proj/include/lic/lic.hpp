#pragma once

// Umbrella header: learned-image-compression library with width-reduced
// student training, complexity accounting, and rate-distortion evaluation.

#include "lic/error.hpp"
#include "lic/rng.hpp"
#include "lic/tensor.hpp"
#include "lic/adam.hpp"
#include "lic/layers.hpp"
#include "lic/entropy.hpp"
#include "lic/losses.hpp"
#include "lic/model.hpp"
#include "lic/checkpoint.hpp"
#include "lic/data.hpp"
#include "lic/train.hpp"
#include "lic/complexity.hpp"
#include "lic/evaluate.hpp"
#include "lic/config.hpp"
