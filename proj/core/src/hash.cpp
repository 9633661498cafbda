#include "tve/hash.hpp"

#include <fstream>
#include <vector>

#include <openssl/evp.h>

#include "tve/errors.hpp"

namespace tve {

std::string sha256_hex(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, len) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw ValidationError("sha256 digest failed");
    }
    EVP_MD_CTX_free(ctx);

    static const char* hexd = "0123456789abcdef";
    std::string out(digest_len * 2, '0');
    for (unsigned i = 0; i < digest_len; ++i) {
        out[2 * i] = hexd[digest[i] >> 4];
        out[2 * i + 1] = hexd[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("sha256: cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(buf.data(), buf.size());
}

} // namespace tve
