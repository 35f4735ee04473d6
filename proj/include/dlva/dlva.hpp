// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dlva/cli/loss_gradcheck.hpp"
#include "dlva/cli/run_config.hpp"
#include "dlva/errors.hpp"
#include "dlva/eval/ablation.hpp"
#include "dlva/eval/metrics.hpp"
#include "dlva/io.hpp"
#include "dlva/losses/losses.hpp"
#include "dlva/model/checkpoint.hpp"
#include "dlva/model/config.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/model/params.hpp"
#include "dlva/numerics/adam.hpp"
#include "dlva/numerics/gradcheck.hpp"
#include "dlva/numerics/ops.hpp"
#include "dlva/numerics/tape.hpp"
#include "dlva/numerics/tensor.hpp"
#include "dlva/permute/permutation.hpp"
#include "dlva/permute/permutation_set.hpp"
#include "dlva/permute/shuffle.hpp"
#include "dlva/rng.hpp"
#include "dlva/sequence/builders.hpp"
#include "dlva/sequence/token_sequence.hpp"
#include "dlva/synthdata/corpus.hpp"
#include "dlva/synthdata/image.hpp"
#include "dlva/synthdata/vocab.hpp"
#include "dlva/training/config.hpp"
#include "dlva/training/trainer.hpp"
