#pragma once

#include "editvae/core.hpp"
#include "editvae/geometry.hpp"
#include "editvae/autodiff.hpp"
#include "editvae/latent.hpp"
#include "editvae/networks.hpp"
#include "editvae/losses.hpp"
#include "editvae/training.hpp"
#include "editvae/editing.hpp"
#include "editvae/metrics.hpp"
#include "editvae/data.hpp"
#include "editvae/checkpoint.hpp"
#include "editvae/service.hpp"
#include "editvae/cli.hpp"
