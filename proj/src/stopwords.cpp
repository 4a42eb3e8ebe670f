#include "robustmc/perturb.hpp"

namespace robustmc {

// Must match assets/stopwords/en_v1.txt line for line.
const std::vector<std::string>& stopwords_v1() {
  static const std::vector<std::string> kWords = {
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "among", "an",
    "and", "another", "any", "are", "around", "as", "at", "be", "because", "been", "before",
    "being", "below", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "doing", "down", "during", "each", "either", "else", "ever", "every", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "however", "i", "if", "in", "into", "is", "it", "its", "itself",
    "just", "may", "me", "might", "more", "most", "must", "my", "myself", "neither", "no",
    "nor", "not", "now", "of", "off", "on", "once", "only", "onto", "or", "other", "ought",
    "our", "ours", "ourselves", "out", "over", "own", "per", "same", "shall", "she", "should",
    "since", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "though", "through",
    "thus", "to", "too", "toward", "towards", "under", "until", "up", "upon", "us", "very",
    "via", "was", "we", "were", "what", "when", "where", "whether", "which", "while", "who",
    "whom", "whose", "why", "will", "with", "within", "without", "would", "yet", "you", "your",
    "yours", "yourself", "yourselves",
  };
  return kWords;
}

const std::unordered_set<std::string>& stopword_set_v1() {
  static const std::unordered_set<std::string> kSet(stopwords_v1().begin(), stopwords_v1().end());
  return kSet;
}

}  // namespace robustmc
