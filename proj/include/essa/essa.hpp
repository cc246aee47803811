#pragma once

// Everything in one include.

#include "essa/core.hpp"
#include "essa/dde.hpp"
#include "essa/adjoint.hpp"
#include "essa/hamiltonian.hpp"
#include "essa/solver.hpp"
#include "essa/models.hpp"
#include "essa/oracle.hpp"
