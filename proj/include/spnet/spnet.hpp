// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_SPNET_HPP_
#define SPNET_SPNET_HPP_

#include "spnet/binary.hpp"
#include "spnet/checkpoint.hpp"
#include "spnet/common.hpp"
#include "spnet/config.hpp"
#include "spnet/data.hpp"
#include "spnet/export.hpp"
#include "spnet/gradcheck.hpp"
#include "spnet/io.hpp"
#include "spnet/kernels.hpp"
#include "spnet/network.hpp"
#include "spnet/ops.hpp"
#include "spnet/quantizers.hpp"
#include "spnet/switchable.hpp"
#include "spnet/tape.hpp"
#include "spnet/tensor.hpp"
#include "spnet/training.hpp"

#endif  // SPNET_SPNET_HPP_
