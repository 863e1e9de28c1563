#pragma once

#include "ecpp/augment.hpp"
#include "ecpp/checkpoint.hpp"
#include "ecpp/cli.hpp"
#include "ecpp/config.hpp"
#include "ecpp/data.hpp"
#include "ecpp/gradcheck.hpp"
#include "ecpp/image.hpp"
#include "ecpp/losses.hpp"
#include "ecpp/models.hpp"
#include "ecpp/optim.hpp"
#include "ecpp/pairing.hpp"
#include "ecpp/pipeline.hpp"
#include "ecpp/rng.hpp"
#include "ecpp/tensor.hpp"
#include "ecpp/views.hpp"
