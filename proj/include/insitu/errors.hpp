#pragma once

#include <stdexcept>
#include <string>

namespace insitu {

/// Base for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (index outside the guard halo, bad dims, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Text input (functor chain, JSON message, config) could not be understood.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A registration clashed with an existing entry or was otherwise invalid.
class RegistryError : public Error {
 public:
  using Error::Error;
};

/// Peer broke the wire protocol (wrong round index, truncated message, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// The rank transport could not deliver or was shut down.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace insitu
